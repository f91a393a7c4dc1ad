//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records each operation as it is evaluated; [`Graph::backward`]
//! walks the record in reverse and accumulates gradients additively across
//! fan-out. Every op that can overflow checks its output and fails with
//! [`AdError::NonFinite`] instead of propagating NaN or infinity.

mod checkpoint;
mod graph;
mod optim;
mod tensor;

use thiserror::Error;

pub use checkpoint::{Checkpoint, TensorSet, MAGIC, VERSION};
pub use graph::{Gradients, Graph, ParamId, Var};
pub use optim::{adagrad_update, adam_update, AdamHyper, ADAGRAD_EPS};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("loss must be a single element, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
