use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: invalid record: {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("every account was filtered out (min_activity = {min_activity})")]
    EmptyVocabulary { min_activity: usize },

    #[error("account index {index} outside vocabulary of size {size}")]
    UnknownAccount { index: usize, size: usize },

    #[error("non-finite value in {stage}")]
    Numeric { stage: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unstable process: {0}")]
    Stability(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn numeric(stage: impl Into<String>) -> Self {
        Error::Numeric {
            stage: stage.into(),
        }
    }
}
