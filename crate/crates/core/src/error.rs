use thiserror::Error;

use crate::model::{SwId, VulId};

/// Errors raised by the protocol engine and its tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("worker {0} is not registered")]
    UnregisteredWorker(SwId),

    #[error("vulnerability {0} is unknown")]
    UnknownVulnerability(VulId),

    #[error("vulnerability {0} was already submitted")]
    DuplicateVulnerability(VulId),

    #[error("invalid token state: {0}")]
    TokenState(&'static str),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
