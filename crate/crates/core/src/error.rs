use thiserror::Error;

use crate::model::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("space mismatch: expected `{expected}`, found `{found}`")]
    SpaceMismatch { expected: String, found: String },

    #[error("invalid measure on `{space}`: {reason}")]
    InvalidMeasure { space: String, reason: String },

    #[error("invalid space `{space}`: {reason}")]
    InvalidSpace { space: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("enumeration refused: {what} has {count} elements, cap is {cap}")]
    CapExceeded { what: String, count: u128, cap: u128 },

    #[error("common-information atom `{0}` has zero mass")]
    ZeroMass(String),

    #[error("missing prescription at common-information atom `{0}`")]
    MissingAssignment(String),

    #[error("problem failed validation:\n{0}")]
    Validation(ValidationReport),

    #[error("{location}: {message}")]
    Parse { location: String, message: String },

    #[error("rejected input: {0}")]
    Rejected(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
