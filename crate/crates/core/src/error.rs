use thiserror::Error;

use crate::market::PatternClass;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: malformed field: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("row {row}: invariant violated: {reason}")]
    InvariantViolation { row: usize, reason: String },

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("could not generate a {class} window within {attempts} attempts")]
    GenerationExhausted { class: PatternClass, attempts: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("cannot evaluate on an empty split")]
    EmptySplit,

    #[error("gradient contains non-finite values")]
    NonFiniteGradient,

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("too few samples: need at least {needed}, have {available}")]
    TooFewSamples { needed: usize, available: usize },

    #[error("query budget of {budget} exhausted")]
    BudgetExceeded { budget: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
