use thiserror::Error;

use crate::backend::BackendError;
use crate::session::{Phase, PhaseEvent};

/// Backend output that could not be turned into a valid structure.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("contract violation: {0}")]
pub struct ContractError(pub String);

impl ContractError {
    pub fn new(reason: impl Into<String>) -> Self {
        ContractError(reason.into())
    }

    pub fn reason(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document {path}: {reason}")]
    Malformed { path: String, reason: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("operation `{operation}` not allowed in phase {phase}")]
    WrongPhase {
        phase: Phase,
        operation: &'static str,
    },
    #[error("illegal transition from {from} on {event:?}")]
    IllegalTransition { from: Phase, event: PhaseEvent },
    #[error("story text is empty")]
    EmptyText,
    #[error("story text has {len} characters, limit is {max}")]
    TextTooLong { len: usize, max: usize },
    #[error("the armoury is full: four weapons already held")]
    Capacity,
    #[error("unknown card {0}")]
    UnknownCard(String),
    #[error("card {0} was already played")]
    AlreadyPlayed(String),
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session {0} is busy with another operation")]
    Busy(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
