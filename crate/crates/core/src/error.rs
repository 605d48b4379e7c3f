use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or command configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid input: {0}")]
    Data(String),

    #[error("cluster {0} is not live")]
    DeadCluster(usize),

    #[error("stage refused: {clusters} clusters cannot absorb {merges} merges")]
    StageRefused { clusters: usize, merges: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 1 = config, 2 = data, 3 = runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::InvalidRow { .. } | Error::Parse { .. } | Error::Data(_) => 2,
            Error::DeadCluster(_) | Error::StageRefused { .. } | Error::Io { .. } | Error::Json(_) => 3,
        }
    }
}
