use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("missing columns: {0:?}")]
    MissingColumns(Vec<String>),

    #[error("unexpected columns: {0:?}")]
    UnexpectedColumns(Vec<String>),

    #[error("schema must have exactly one target column, found {0}")]
    TargetCardinality(usize),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("preprocessing error: {0}")]
    Preprocess(String),

    #[error("model input error: {0}")]
    Matrix(#[from] tabnet_core::TabNetError),

    #[error("authentication failed: ciphertext or key is wrong")]
    AuthenticationFailed,

    #[error("blob was sealed under key {blob:?}, not {given:?}")]
    KeyMismatch { blob: String, given: String },

    #[error("malformed blob: {0}")]
    MalformedBlob(String),

    #[error("nonce space exhausted for key {0:?}")]
    NonceExhausted(String),

    #[error("watched location {0} does not exist")]
    WatchTarget(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
