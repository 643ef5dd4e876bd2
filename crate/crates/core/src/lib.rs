//! Domain-decomposed uncertainty quantification for elliptic PDEs with
//! conditional normalizing flows.
//!
//! The crate covers the whole pipeline: random-field discretization,
//! bilinear finite elements, Dirichlet–Neumann domain decomposition with
//! POD-reduced interfaces, neural surrogates for the coupling maps,
//! conditional Knothe–Rosenblatt flows for interface densities and the
//! importance-sampling estimators that tie them together.

pub mod dd;
pub mod flows;
pub mod nn;
pub mod pde;
pub mod pipeline;
pub mod randfield;
pub mod stats;
pub mod surrogate;
