use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MisdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MisdError {
    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    #[error("undefined metric `{metric}`: {reason}")]
    UndefinedMetric { metric: &'static str, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("incompatible inputs: {0}")]
    Compatibility(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl MisdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MisdError::Io { path: path.into(), source }
    }
}
