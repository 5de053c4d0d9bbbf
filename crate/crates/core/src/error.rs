use std::path::PathBuf;

use thiserror::Error;

/// Failure classes for the remote backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendErrorKind {
    /// Connection failures, timeouts, 429 and 5xx after retries ran out.
    Transport,
    /// A 4xx other than 429, or a malformed reply body.
    Request,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("table error in {row}: {message}")]
    Table { row: String, message: String },

    #[error("unknown emoji {0:?}")]
    UnknownEmoji(String),

    #[error("unknown action {0:?}")]
    UnknownAction(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("backend {kind:?} error after {attempts} attempt(s): {message}")]
    Backend {
        kind: BackendErrorKind,
        attempts: u32,
        message: String,
    },

    #[error("unknown turn {0}")]
    UnknownTurn(u64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
