use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Core(#[from] truss_core::Error),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown suite {0:?}")]
    UnknownSuite(String),

    #[error("scenario file: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidScenario(msg.into())
}
