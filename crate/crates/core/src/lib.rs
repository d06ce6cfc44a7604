//! Adaptive multi-view sparsity learning for dimensionally unbalanced views.
//!
//! The crate bundles the whole pipeline:
//!
//! * [`numerics`]: covariance, Pearson correlation, Jacobi eigenvalues, 1-D Wasserstein.
//! * [`data`]: multi-view datasets, CSV ingestion, standardization, the unbalanced
//!   degree metric and the synthetic benchmarks.
//! * [`tensor_nn`]: dense layers, layer-wide batch normalization, losses and Adam,
//!   all with hand-written reverse-mode gradients.
//! * [`graph_ssl`]: per-view KNN similarity graphs, the consensus graph and the
//!   binary pseudo-labels used as contrastive supervision.
//! * [`model`]: view encoders with the sparse batch-norm aligned layer, mean fusion
//!   and the pretrain / finetune driver.
//! * [`pna`]: principal neuron analysis, the eigen-spectrum driven one-shot pruner.
//! * [`head`]: a relu MLP classifier and the dense-versus-pruned overfitting study.
//! * [`eval`]: k-means, Hungarian accuracy, NMI, ARI and a linear probe.
//! * [`pipeline`]: the run configuration and the end-to-end driver used by the CLI.
//!
//! Data-parallel kernels go through [`exec::Execution`]; with the default `parallel`
//! feature they run on rayon, without it every kernel takes the sequential path.

// `!(a < b)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod eval;
pub mod exec;
pub mod graph_ssl;
pub mod head;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod pna;
pub mod rng;
pub mod tensor_nn;

pub use exec::Execution;
