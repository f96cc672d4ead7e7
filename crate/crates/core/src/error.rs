use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid ticket: {0}")]
    InvalidTicket(String),

    #[error("ticket not found: {0}")]
    TicketNotFound(String),

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unparseable query: {0}")]
    UnparseableQuery(String),

    #[error("query plan error: {0}")]
    Plan(String),

    #[error("plan execution error: {0}")]
    Execution(String),

    #[error("no answer: graph pipeline failed ({graph}) and baseline retrieval failed ({baseline})")]
    NoAnswer { graph: String, baseline: String },

    #[error("snapshot error at {path}: {message}")]
    Snapshot { path: PathBuf, message: String },

    #[error("no snapshot at {0}; run `build` first")]
    NoSnapshot(PathBuf),

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn snapshot(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Snapshot {
            path: path.into(),
            message: message.into(),
        }
    }
}
