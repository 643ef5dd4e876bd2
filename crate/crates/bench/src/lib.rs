//! Shared fixtures for the kernel benchmarks.

use dduq_core::dd::{Decomposition, Discretization};
use dduq_core::flows::{check::jitter_parameters, FlowConfig, FlowModel};
use dduq_core::nn::Mat;
use dduq_core::randfield::TruncatedNormal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rows with entries drawn uniformly from `[-1, 1]`, reproducible per seed.
pub fn uniform_rows(n: usize, d: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// A conditional flow with non-trivial parameters, as used for a two-parameter interface.
pub fn trained_like_flow(dim: usize, dim_c: usize, stages: usize) -> FlowModel {
    let mut m = FlowModel::conditional(dim, dim_c, FlowConfig { stages, ..Default::default() }, 1).expect("valid flow");
    jitter_parameters(&mut m, 0.1, 2);
    m
}

pub fn two_component() -> Discretization {
    Discretization::new(Decomposition::two_component()).expect("preset is valid")
}

/// Per-sample inputs `ξ` drawn from the default law.
pub fn inputs(disc: &Discretization, n: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let law = TruncatedNormal::default();
    let per_sub: Vec<Vec<Vec<f64>>> =
        (0..disc.len()).map(|i| law.sample_inputs(disc.xi_dim(i), n, seed + i as u64)).collect();
    (0..n).map(|s| per_sub.iter().map(|v| v[s].clone()).collect()).collect()
}
