use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("model error at line {line}: {message}")]
    Model { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("controllet registry rejected: {0}")]
    Registry(String),

    #[error("switch rejected: {0}")]
    SwitchRejected(String),

    #[error("trace format error: {0}")]
    TraceFormat(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("identification error: {0}")]
    Identification(String),

    #[error("plant fault: {0}")]
    PlantFault(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
