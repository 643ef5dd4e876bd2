//! Conditional Knothe–Rosenblatt flows.
//!
//! A [`FlowModel`] maps `(α, c)` to a standard normal `z` through blocks of
//! conditional affine couplings, scale-bias layers and a terminal
//! element-wise monotone map, giving the exact conditional density
//! `p(α | c) = N(z; 0, I) · |det ∂z/∂α|`.

pub mod check;
mod layers;
mod model;
mod train;

pub use layers::{CouplingLayer, Layer, LayerKind, ScaleBias};
pub use model::{block_sizes, FlowConfig, FlowManifest, FlowModel, Standardization};
pub use train::{train_flow, train_flow_with, TrainConfig, TrainReport};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("invalid flow configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("non-finite value after layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("optimizer failed at epoch {epoch}, batch {batch}: {source}")]
    Optimizer {
        epoch: usize,
        batch: usize,
        #[source]
        source: NnError,
    },
    #[error("flow manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}
