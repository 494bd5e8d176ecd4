use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}: {text}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
        text: String,
    },

    #[error("{path}: duplicate id {id:?} on lines {first} and {second}")]
    DuplicateId {
        path: PathBuf,
        id: String,
        first: usize,
        second: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Network-level failure: connect, timeout, broken body.
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    /// The remote answered, but with an error status or an unusable body.
    #[error("service error from {endpoint} (status {status}): {message}")]
    Service {
        endpoint: String,
        status: u16,
        message: String,
    },

    #[error("no recorded completion for request {key}")]
    ReplayMiss { key: String },

    #[error("no search fixture for queries: {}", .queries.join(" | "))]
    FixtureMiss { queries: Vec<String> },

    #[error("cannot parse dialog from completion: {reason}")]
    DialogParse { reason: String, raw: String },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Transport failures are the only class worth retrying.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::Transport { .. })
            || matches!(self, Error::Service { status, .. } if *status >= 500 || *status == 429)
    }
}
