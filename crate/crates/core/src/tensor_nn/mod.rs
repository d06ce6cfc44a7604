//! Minimal differentiable building blocks with explicit reverse-mode passes.
//!
//! Every forward returns a cache; the matching backward consumes it and returns
//! the input gradient plus parameter gradients. There is no global tape.

mod adam;
mod dense;
mod loss;
mod norm;

pub use adam::{Adam, AdamConfig, ParamSlot};
pub use dense::{Activation, DenseCache, DenseGrads, DenseLayer};
pub use loss::{contrastive_loss, graph_embedding_loss, l1_penalty, softmax_cross_entropy, LossOutput};
pub use norm::{LayerNormState, NormCache, NormGrads, NormMode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("non-finite gradient in parameter tensor {tensor}")]
    NumericFault { tensor: String },
}

/// Whether normalization layers use batch statistics (and update their running
/// estimates) or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}
