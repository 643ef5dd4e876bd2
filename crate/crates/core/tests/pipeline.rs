use dduq_core::dd::{Decomposition, IterationConfig};
use dduq_core::flows::{FlowConfig, TrainConfig};
use dduq_core::pipeline::synthetic::LinearGaussianSystem;
use dduq_core::pipeline::{
    assign_weights, effective_sample_size, exceedance_probability, moments, prepare, reference_monte_carlo,
    run_offline, run_online, standard_error, train_surrogates, weighted_moments, OfflineConfig, OnlineConfig,
    PrepConfig, SampleTable,
};
use dduq_core::surrogate::SurrogateConfig;
use proptest::prelude::*;

#[test]
fn tiny_two_component_run() {
    let prep =
        prepare(Decomposition::two_component(), &PrepConfig { snapshots: 40, seed: 3, ..Default::default() }).unwrap();
    assert_eq!(prep.bases.iter().map(|b| b.dim()).collect::<Vec<_>>(), vec![2, 6]);
    let off = run_offline(&prep, &OfflineConfig { samples: 300, seed: 3 }).unwrap();
    let again = run_offline(&prep, &OfflineConfig { samples: 300, seed: 3 }).unwrap();
    assert_eq!(off.tables, again.tables, "offline stage is not reproducible");

    let sur = train_surrogates(&prep, &off.tables, &SurrogateConfig { max_epochs: 15, seed: 3, ..Default::default() })
        .unwrap();
    let models: Vec<_> = sur.into_iter().map(|s| s.0).collect();
    let cfg = OnlineConfig {
        samples: 300,
        seed: 3,
        iteration: IterationConfig::default(),
        flows: vec![FlowConfig { stages: 2, ..Default::default() }, FlowConfig { stages: 3, ..Default::default() }],
        train: TrainConfig { epochs: 3, batch_size: 64, ..Default::default() },
    };
    let on = run_online(&prep, &models, &cfg).unwrap();
    assert!(on.history.windows(2).count() > 0);

    let reference = reference_monte_carlo(&prep.disc, &prep.law, 300, 4).unwrap();
    let mut tables = off.tables;
    for (i, table) in tables.iter_mut().enumerate() {
        let ws = assign_weights(&on.flows[i], &prep.proposals[i], table).unwrap();
        assert!((1.0..=table.y.len() as f64).contains(&ws.ess));
        let m = weighted_moments(&table.y, table.weights.as_ref().unwrap()).unwrap();
        let r = moments(&reference.outputs[i]).unwrap();
        assert!(m.mean.is_finite() && r.mean.is_finite());
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.txt");
    tables[1].save(&path).unwrap();
    assert_eq!(SampleTable::load(&path).unwrap(), tables[1]);
}

#[test]
fn synthetic_exact_weights_match_analytic_probabilities() {
    let sys = LinearGaussianSystem::example();
    let prop = sys.covering_proposal(1.5).unwrap();
    let run = sys.offline(&prop, 10_000, 11).unwrap();
    let (mean, var) = sys.output_law();
    let m = weighted_moments(&run.y, &run.weights).unwrap();
    assert!((m.mean - mean).abs() < 3.0 * standard_error(&run.y, &run.weights).unwrap());
    for k in [-1.5, -0.5, 0.0, 0.5, 1.5] {
        let a = mean + k * var.sqrt();
        let p = exceedance_probability(&run.y, &run.weights, a).unwrap();
        let ind: Vec<f64> = run.y.iter().map(|&y| f64::from(u8::from(y <= a))).collect();
        let se = standard_error(&ind, &run.weights).unwrap();
        assert!((p - sys.cdf(a)).abs() < 3.0 * se, "threshold {a}: {p} vs {}", sys.cdf(a));
    }
}

fn weighted_sample() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..60).prop_flat_map(|n| (prop::collection::vec(-10.0f64..10.0, n), prop::collection::vec(1e-6f64..1e3, n)))
}

proptest! {
    #[test]
    fn estimators_ignore_power_of_two_scaling((y, w) in weighted_sample(), k in -40i32..40, a in -10.0f64..10.0) {
        let c = 2f64.powi(k);
        let cw: Vec<f64> = w.iter().map(|w| c * w).collect();
        prop_assert_eq!(weighted_moments(&y, &w).unwrap(), weighted_moments(&y, &cw).unwrap());
        prop_assert_eq!(exceedance_probability(&y, &w, a).unwrap(), exceedance_probability(&y, &cw, a).unwrap());
        let (e, ce) = (effective_sample_size(&w), effective_sample_size(&cw));
        prop_assert!((e - ce).abs() <= 1e-12 * e);
    }

    #[test]
    fn estimators_ignore_arbitrary_scaling((y, w) in weighted_sample(), c in 1e-3f64..1e3, a in -10.0f64..10.0) {
        let cw: Vec<f64> = w.iter().map(|w| c * w).collect();
        let (m, cm) = (weighted_moments(&y, &w).unwrap(), weighted_moments(&y, &cw).unwrap());
        prop_assert!((m.mean - cm.mean).abs() <= 1e-12 * (1.0 + m.mean.abs()));
        prop_assert!((m.variance - cm.variance).abs() <= 1e-12 * (1.0 + m.variance));
        let (p, cp) = (exceedance_probability(&y, &w, a).unwrap(), exceedance_probability(&y, &cw, a).unwrap());
        prop_assert!((p - cp).abs() <= 1e-12);
        let (e, ce) = (effective_sample_size(&w), effective_sample_size(&cw));
        prop_assert!((e - ce).abs() <= 1e-12 * e);
    }

    #[test]
    fn effective_sample_size_is_bounded((_, w) in weighted_sample()) {
        let e = effective_sample_size(&w);
        prop_assert!(e >= 1.0 - 1e-12 && e <= w.len() as f64 * (1.0 + 1e-12));
    }
}

#[test]
fn prepared_artifacts_round_trip() {
    let dec = Decomposition::two_component();
    let prep = prepare(dec.clone(), &PrepConfig { snapshots: 30, seed: 5, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    prep.save(dir.path()).unwrap();
    let back = dduq_core::pipeline::Prepared::load(dir.path(), dec).unwrap();
    assert_eq!(back.bases, prep.bases);
    assert_eq!(back.proposals, prep.proposals);
    assert_eq!(back.disc.kl, prep.disc.kl);
    let a = run_offline(&prep, &OfflineConfig { samples: 20, seed: 1 }).unwrap();
    let b = run_offline(&back, &OfflineConfig { samples: 20, seed: 1 }).unwrap();
    assert_eq!(a.tables, b.tables);
}
