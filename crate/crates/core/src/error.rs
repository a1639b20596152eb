use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ReidError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ReidError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("feature error: {0}")]
    Feature(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("fusion error: {0}")]
    Fusion(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ReidError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ReidError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        ReidError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit status used by the CLI for this class of failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ReidError::Config(_) => 2,
            ReidError::Parse { .. } | ReidError::Io { .. } => 3,
            ReidError::Ingestion(_) | ReidError::Feature(_) => 4,
            ReidError::Geometry(_) => 5,
            ReidError::Evaluation(_) => 6,
            ReidError::Fusion(_) | ReidError::Internal(_) => 70,
        }
    }
}
