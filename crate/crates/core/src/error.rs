use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent or missing configuration (dimensions, paths, targets).
    #[error("configuration error: {0}")]
    Config(String),
    /// A file did not match its expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),
    /// NaN or divergence during optimization.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
