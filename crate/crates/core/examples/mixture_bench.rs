//! Conditional versus joint flow on the 16-dimensional mixture.
//!
//! Usage: `mixture_bench [context_dim] [n_train] [epochs] [n_validation] [seed]`

use std::time::Instant;

use dduq_core::flows::TrainConfig;
use dduq_core::stats::{mixture_benchmark, MixtureBenchConfig};

fn main() {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let arg = |i: usize, d: u64| args.get(i).copied().unwrap_or(d);
    let defaults = MixtureBenchConfig::default();
    let cfg = MixtureBenchConfig {
        context_dim: arg(0, 8) as usize,
        n_train: arg(1, 200_000) as usize,
        n_validation: arg(3, 1_000_000) as usize,
        seed: arg(4, 0),
        train: TrainConfig { epochs: arg(2, 10) as usize, ..defaults.train.clone() },
        track_epochs: true,
        ..defaults
    };
    let t = Instant::now();
    let r = mixture_benchmark(&cfg).expect("benchmark");
    print!("{}", r.to_csv());
    println!("final conditional {:.5} joint {:.5} in {:.1}s", r.conditional, r.joint, t.elapsed().as_secs_f64());
}
