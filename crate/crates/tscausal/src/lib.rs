//! Temporal causal discovery for multivariate time series.
//!
//! The crate trains a small interpretable attention model to predict each
//! series one step at a time under a temporal-priority constraint, then
//! decomposes the trained model's predictions — relevance propagation
//! through every layer, modulated by gradients — into per-pair causal
//! scores, a clustering-based edge selection, and per-edge time delays.
//!
//! The pieces compose in pipeline order:
//!
//! * [`data`] — ground-truthed generators (linear lagged structures,
//!   a chaotic cyclic system) and CSV ingestion;
//! * [`train`] — windowing, Adam optimization with early stopping;
//! * [`model`] — the predictor itself: forward trace, hand-derived
//!   backward pass, checkpoints;
//! * [`detect`] — relevance propagation, gradient modulation, k-means
//!   edge selection, delay extraction;
//! * [`graph`] / [`eval`] — causal-graph artifacts and scoring against
//!   ground truth;
//! * [`pipeline`] — one-config orchestration used by the `tscausal`
//!   binary (subcommands `generate`, `train`, `discover`, `eval`,
//!   `bench`).
//!
//! Every stage is deterministic given its seed, and the runnable programs
//! under `examples/` demonstrate each major capability end to end.

pub mod data;
pub mod detect;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod optim;
pub mod pipeline;
mod seeds;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
