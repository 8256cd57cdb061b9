use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("invalid action {0}")]
    InvalidAction(usize),
    #[error("no decision is pending")]
    NoPendingDecision,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: line {line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
