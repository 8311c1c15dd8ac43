use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

/// Per-request failure delivered in place of a response.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServeError {
    #[error("queue is full")]
    Backpressure,

    #[error("rejected by {stage}: {reason}")]
    Rejected {
        stage: String,
        reason: String,
        status: u16,
        retry_after_ms: Option<u64>,
    },

    #[error("invalid request: {0}")]
    BadRequest(String),

    #[error("compute failed after retry: {0}")]
    Compute(String),

    #[error("model unavailable: {0}")]
    Unavailable(String),

    #[error("service is shutting down")]
    ShuttingDown,
}

impl ServeError {
    pub fn status(&self) -> u16 {
        match self {
            ServeError::Backpressure => 503,
            ServeError::Rejected { status, .. } => *status,
            ServeError::BadRequest(_) => 400,
            ServeError::Compute(_) => 500,
            ServeError::Unavailable(_) | ServeError::ShuttingDown => 503,
        }
    }

    /// Label used on the error counter.
    pub fn reason(&self) -> String {
        match self {
            ServeError::Backpressure => "backpressure".into(),
            ServeError::Rejected { stage, .. } => format!("security_{stage}"),
            ServeError::BadRequest(_) => "bad_request".into(),
            ServeError::Compute(_) => "compute".into(),
            ServeError::Unavailable(_) => "unavailable".into(),
            ServeError::ShuttingDown => "shutting_down".into(),
        }
    }

    pub fn retry_after(&self) -> Option<Duration> {
        match self {
            ServeError::Rejected { retry_after_ms, .. } => retry_after_ms.map(Duration::from_millis),
            _ => None,
        }
    }
}

/// Failures constructing or running the service itself.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
