use thiserror::Error;

/// Errors raised by model construction, inference and training.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TabNetError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("training error: {0}")]
    Training(String),
}

/// Errors raised while decoding a serialized model.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LoadError {
    #[error("bad magic bytes: expected \"TBNT\"")]
    BadMagic,

    #[error("unsupported format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u16, supported: u16 },

    #[error("stream truncated: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("malformed model stream: {0}")]
    Malformed(String),
}

pub type Result<T, E = TabNetError> = std::result::Result<T, E>;
