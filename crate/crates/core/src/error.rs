use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum MtdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("basis mismatch: {0}")]
    SpecMismatch(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MtdError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MtdError::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = MtdError> = std::result::Result<T, E>;
