//! Dirichlet–Neumann domain decomposition with reduced interface coordinates.

mod decomposition;
mod exact;
mod iterate;
mod pod;
mod problem;

pub use decomposition::{offsets, restrict, Decomposition, Edge, SubdomainSpec};
pub use exact::{
    edge_bases, identity_bases, interface_snapshots, local_step, nodal_export, ExactOracle, LocalSolution,
};
pub use iterate::{dn_update, iterate, log_linear_fit, CouplingOracle, IterationConfig, IterationOutcome};
pub use pod::{build_pod, EdgeBasis};
pub use problem::Discretization;

use crate::pde::PdeError;
use crate::randfield::FieldError;

#[derive(Debug, thiserror::Error)]
pub enum DdError {
    #[error("invalid decomposition: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("POD: {0}")]
    Pod(String),
    #[error("interface parameters of sample {sample} became non-finite at step {step}")]
    Divergence { step: usize, sample: usize },
    #[error("coupling oracle: {0}")]
    Oracle(String),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Field(#[from] FieldError),
}
