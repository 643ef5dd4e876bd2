//! End-to-end run on the two-component diffusion problem.
//!
//! `cargo run --release --example two_component -- [N_off] [seed] [N_ref]`

use std::time::Instant;

use dduq_core::dd::{log_linear_fit, Decomposition, IterationConfig};
use dduq_core::flows::{FlowConfig, TrainConfig};
use dduq_core::pipeline::{
    assign_weights, error_metrics, moments, prepare, reference_monte_carlo, run_offline, run_online, train_surrogates,
    weighted_moments, OfflineConfig, OnlineConfig, PrepConfig,
};
use dduq_core::surrogate::SurrogateConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map_or(Ok(1000), |s| s.parse())?;
    let seed: u64 = args.get(2).map_or(Ok(1), |s| s.parse())?;
    let n_ref: usize = args.get(3).map_or(Ok(20_000), |s| s.parse())?;
    let t = Instant::now();
    let prep = prepare(Decomposition::two_component(), &PrepConfig { seed, ..Default::default() })?;
    println!("prep {:.1}s captured {:?}", t.elapsed().as_secs_f64(), prep.disc.captured);
    let off = run_offline(&prep, &OfflineConfig { samples: n, seed })?;
    println!("offline {:.1}s dropped {:?}", t.elapsed().as_secs_f64(), off.dropped);
    let sur = train_surrogates(&prep, &off.tables, &SurrogateConfig { seed, ..Default::default() })?;
    for (_, r) in &sur {
        println!("surrogate best epoch {} val mse {:.3e} epochs {}", r.best_epoch, r.best_val_mse, r.val_mse.len());
    }
    println!("surrogates {:.1}s", t.elapsed().as_secs_f64());
    let models: Vec<_> = sur.into_iter().map(|s| s.0).collect();
    let flows = vec![FlowConfig { stages: 2, ..Default::default() }, FlowConfig { stages: 3, ..Default::default() }];
    let cfg = OnlineConfig {
        samples: n,
        seed,
        iteration: IterationConfig::default(),
        flows,
        train: TrainConfig { epochs: 100, ..Default::default() },
    };
    let on = run_online(&prep, &models, &cfg)?;
    let (slope, r2) = log_linear_fit(&on.history).unwrap_or((f64::NAN, f64::NAN));
    println!(
        "online {:.1}s steps max {} slope {slope:.3} r2 {r2:.3} nonconv {}",
        t.elapsed().as_secs_f64(),
        on.history.len(),
        on.non_converged
    );
    for r in &on.flow_reports {
        println!(
            "flow best {} nll {:.4} -> {:.4}",
            r.best_epoch,
            r.initial_holdout_nll,
            r.holdout_nll.iter().cloned().fold(f64::INFINITY, f64::min)
        );
        println!(
            "  curve {:?}",
            r.holdout_nll.iter().step_by(5).map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
    let reference = reference_monte_carlo(&prep.disc, &prep.law, n_ref, seed + 1000)?;
    println!("reference {:.1}s", t.elapsed().as_secs_f64());
    let mut tables = off.tables;
    for i in 0..2 {
        let ws = assign_weights(&on.flows[i], &prep.proposals[i], &mut tables[i])?;
        let m = weighted_moments(&tables[i].y, tables[i].weights.as_ref().unwrap())?;
        let r = moments(&reference.outputs[i])?;
        let (e, v) = error_metrics(&m, &r)?;
        println!(
            "sub {i}: ess {:.1} clamped {} mean {:.5} ref {:.5} var {:.5e} ref {:.5e} eps {e:.4} eta {v:.4}",
            ws.ess, ws.clamped, m.mean, r.mean, m.variance, r.variance
        );
    }
    Ok(())
}
