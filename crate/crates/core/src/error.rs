use thiserror::Error;

/// Failure categories surfaced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("stability error: {0}")]
    Stability(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("conditioning error: {0}")]
    Conditioning(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("divergence: {0}")]
    Divergence(String),
}

/// Coarse grouping used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numerical,
    Divergence,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Dimension(_) | Error::Unsupported(_) => ErrorCategory::Config,
            Error::Divergence(_) => ErrorCategory::Divergence,
            _ => ErrorCategory::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
