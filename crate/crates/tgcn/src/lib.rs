//! Tensor graph convolutional networks for link-weight estimation on
//! dynamic graphs.
//!
//! A dynamic graph is a sequence of snapshots over `T` time slots sharing
//! one node set. This crate represents it as third-order tensors (adjacency
//! and link weights), runs graph convolutions jointly over space and time
//! through a tensor M-product whose banded, row-stochastic mixing matrix is
//! itself learned, and trains the whole stack with a Huber objective and
//! hand-written reverse-mode gradients that are verified against central
//! finite differences.
//!
//! Modules:
//! - [`tensor`]: dense third-order tensors, mode-n products, the banded
//!   M-transform / inverse / face-wise / M-product algebra.
//! - [`graph`]: edge-list ingestion, adjacency normalization, splits, and
//!   synthetic graph generation.
//! - [`model`]: node embedding, the learnable mixing matrix, stacked tensor
//!   graph convolution layers, and the edge prediction head.
//! - [`train`]: Huber loss, exact reverse-mode gradients, optimizers,
//!   finite-difference verification, and checkpoints.
//! - [`eval`]: MAE / RMSE reports over a split.
//! - [`cli`]: the `tgcn` command-line front end.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use graph::{DynamicGraph, NormalizedAdjacency, SparseAdjacency, SplitAssignment, SplitTag};
pub use model::{Activation, MixingMatrix, ModelConfig, ModelParameters};
pub use tensor::{BandedLowerMatrix, Matrix, Tensor3};
pub use train::{GradientSet, OptimizerKind, TrainConfig};
