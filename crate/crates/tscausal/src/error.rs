//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Validation routines
//! that can detect several problems at once (config loading, CSV parsing)
//! collect all of them into a single [`Error::InvalidConfig`] so a caller
//! sees the complete list in one round trip.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All error conditions surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A scalar or index argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// One or more configuration fields are invalid. All violations are
    /// collected before reporting.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),

    /// The series is shorter than one full window.
    #[error("input too short: series length {length} is smaller than window size {window}")]
    InputTooShort { length: usize, window: usize },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss became {loss}")]
    Diverged { epoch: usize, loss: f64 },

    /// Numerical integration left the finite range.
    #[error("integration blew up at step {step}: state became non-finite")]
    IntegrationBlowUp { step: usize },

    /// A data or graph file failed to parse; `detail` names the offending
    /// row/column where that is known.
    #[error("failed to parse {path}: {detail}")]
    ParseError { path: String, detail: String },

    /// Graph construction violated an invariant (duplicate edge,
    /// out-of-range vertex, ...).
    #[error("graph error: {0}")]
    Graph(String),

    /// Checkpoint file is malformed or belongs to a different format
    /// version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Helper for shape errors built from format strings.
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// Helper for argument errors built from format strings.
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
