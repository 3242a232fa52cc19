use std::io;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum SkimError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("expression error at byte {pos}: {msg}")]
    Expr { pos: usize, msg: String },

    #[error("query error: {0}")]
    Query(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("range [{offset}, +{len}) out of bounds for source of {size} bytes")]
    OutOfRange { offset: u64, len: u64, size: u64 },

    #[error("event {event} out of range (n_events = {n_events})")]
    EventOutOfRange { event: u64, n_events: u64 },
}

pub type Result<T> = std::result::Result<T, SkimError>;

impl SkimError {
    pub fn format(msg: impl Into<String>) -> Self {
        SkimError::Format(msg.into())
    }

    pub fn plan(msg: impl Into<String>) -> Self {
        SkimError::Plan(msg.into())
    }

    pub fn transport(msg: impl Into<String>) -> Self {
        SkimError::Transport(msg.into())
    }
}
