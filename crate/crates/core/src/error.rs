use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible sources: {0}")]
    IncompatibleSources(String),

    #[error("component is not a heralded Psi- outcome (got {0})")]
    NotHeralded(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
