use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },
    #[error("out of bounds: {0}")]
    Bounds(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim(expected: impl ToString, actual: impl ToString) -> Error {
    Error::Dimension {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
