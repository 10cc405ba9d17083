use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DybmError>;

#[derive(Debug, Error)]
pub enum DybmError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The pre-activation of a unit became NaN or infinite.
    #[error("non-finite field {value} at unit {unit} (training diverged)")]
    NumericalState { unit: usize, value: f64 },

    #[error("training diverged at step {step} (max |grad| = {max_grad})")]
    Divergence { step: u64, max_grad: f64 },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DybmError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DybmError::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DybmError::Shape(msg.into())
    }
}
