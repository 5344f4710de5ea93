use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter bound relative to the data or to another parameter failed.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("point cloud error: {0}")]
    Cloud(String),

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("sampling stalled: {0}")]
    Sampling(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
