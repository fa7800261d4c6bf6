//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that were required to agree did not.
    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    DimensionMismatch {
        context: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// Input data violated a stated precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Non-finite values or other numeric trouble.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Bad configuration (file contents or programmatic).
    #[error("config error: {0}")]
    Config(String),

    /// An API contract was broken (e.g. backward on a non-scalar).
    #[error("contract error: {0}")]
    Contract(String),

    /// A test oracle could not run (e.g. non-deterministic loss function).
    #[error("oracle error: {0}")]
    Oracle(String),

    /// Training left the stable regime; checkpoints written so far are kept.
    #[error("training diverged at step {step}: {what}")]
    Diverged { step: u64, what: String },

    /// Malformed on-disk artifact (tensor file, checkpoint, dataset dir).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dims(context: impl Into<String>, left: &[usize], right: &[usize]) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
