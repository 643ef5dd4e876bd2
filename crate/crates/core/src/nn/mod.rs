//! Dense arrays, tape-based reverse-mode differentiation, layers and Adam.

mod adam;
pub(crate) mod cdf;
mod checkpoint;
mod graph;
mod layers;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, LayerEntry, MAGIC, VERSION};
pub use graph::{Graph, ParamId, ParamStore, ParameterTensor, Unary, Var, LEAKY_SLOPE};
pub use layers::{apply_unary, glorot, Linear, Mlp};
pub use tensor::{gemm, matmul, Mat};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in parameter {index} ({name})")]
    NonFiniteGradient { index: usize, name: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
