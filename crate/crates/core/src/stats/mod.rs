//! Gaussian laws, mixtures, density-error metrics and kernel density estimates.

mod benchmark;
mod gaussian;
mod kde;
mod mixture;

pub use benchmark::{mixture_benchmark, BenchEpoch, MixtureBenchConfig, MixtureBenchReport};
pub use gaussian::GaussianLaw;
pub use kde::Kde;
pub use mixture::{relative_kl_error, MixtureLaw};

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("covariance: {0}")]
    Covariance(String),
    #[error("mixture: {0}")]
    Mixture(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Flow(#[from] crate::flows::FlowError),
}
