//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tensor operations, data validation, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree for the given operation.
    #[error("{op}: dimension mismatch between shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An axis argument does not exist for the operand's shape.
    #[error("{op}: axis {axis} is out of range for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },

    /// A NaN or infinite value reached an operation that requires finite input.
    #[error("{op}: input contains NaN or infinite values")]
    NonFinite { op: &'static str },

    /// A caller violated an operation's contract (bad index, length mismatch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid model, run, or data configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Regression target has (near-)zero variance, so nMSE is undefined.
    #[error("degenerate target: variance {variance:e} is below the minimum {min:e}")]
    DegenerateTarget { variance: f64, min: f64 },

    /// Training produced a non-finite loss and was aborted.
    #[error("numeric abort at step {step}: loss component `{component}` is not finite")]
    NumericAbort { step: usize, component: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
