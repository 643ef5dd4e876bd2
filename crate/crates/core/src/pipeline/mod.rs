//! Offline/online importance-sampling pipeline and its estimators.

mod estimators;
mod stages;
pub mod synthetic;
mod table;

pub use crate::stats::GaussianLaw;
pub use estimators::{
    effective_sample_size, error_metrics, exceedance_probability, importance_weights, moments, standard_error,
    weighted_moments, Moments, WEIGHT_CLAMP,
};
pub use stages::{
    assign_weights, indicator_histogram, prepare, reference_monte_carlo, run_offline, run_online, sample_system,
    train_surrogates, OfflineConfig, OfflineResult, OnlineConfig, OnlineResult, PrepConfig, Prepared, ReferenceResult,
    SurrogateOracle, WeightSummary, MAX_FAILURE_RATE,
};
pub use table::SampleTable;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dd::DdError;
use crate::flows::FlowError;
use crate::stats::StatsError;
use crate::surrogate::SurrogateError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("proposal: {0}")]
    Proposal(String),
    #[error("weights: {0}")]
    Weights(String),
    #[error("sample table: {0}")]
    Table(String),
    #[error("{stage}: {failed} of {total} samples failed")]
    Failures { stage: &'static str, failed: usize, total: usize },
    #[error("{failed} of {total} samples did not converge; log10 indicator histogram {histogram:?}")]
    NonConverged { failed: usize, total: usize, histogram: Vec<(i32, usize)> },
    #[error(transparent)]
    Dd(#[from] DdError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Independent seed for a named random stream.
pub fn stream_seed(base: u64, stream: &str) -> u64 {
    // FNV-1a over the name, mixed into the base with a splitmix64 finalizer.
    let h = stream.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    let mut z = base ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for sample `index` of a stream, independent of worker count.
pub fn sample_rng(stream: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream ^ index as u64)
}
