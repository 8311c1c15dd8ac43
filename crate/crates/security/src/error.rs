use thiserror::Error;

/// Why a token was refused. Each reason is counted separately.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JwtError {
    #[error("malformed token: {0}")]
    Malformed(String),

    #[error("unsupported algorithm {0:?}")]
    UnsupportedAlgorithm(String),

    #[error("unknown key id {0:?}")]
    UnknownKeyId(String),

    #[error("verification keys unavailable: {0}")]
    KeyUnavailable(String),

    #[error("signature does not verify")]
    BadSignature,

    #[error("token expired at {expired_at}, now {now}")]
    Expired { expired_at: u64, now: u64 },

    #[error("issuer {found:?} is not {expected:?}")]
    WrongIssuer { expected: String, found: String },
}

impl JwtError {
    pub fn reason(&self) -> &'static str {
        match self {
            JwtError::Malformed(_) => "malformed",
            JwtError::UnsupportedAlgorithm(_) => "unsupported_algorithm",
            JwtError::UnknownKeyId(_) => "unknown_key_id",
            JwtError::KeyUnavailable(_) => "key_unavailable",
            JwtError::BadSignature => "bad_signature",
            JwtError::Expired { .. } => "expired",
            JwtError::WrongIssuer { .. } => "wrong_issuer",
        }
    }
}

#[derive(Debug, Error)]
pub enum SecurityError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("tls error: {0}")]
    Tls(String),

    #[error("certificate generation failed: {0}")]
    Certificate(#[from] rcgen::Error),

    #[error(transparent)]
    Jwt(#[from] JwtError),

    #[error("key set fetch failed: {0}")]
    KeyFetch(String),

    #[error("key error: {0}")]
    Key(String),

    #[error("audit log: {0}")]
    Audit(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<rustls::Error> for SecurityError {
    fn from(e: rustls::Error) -> Self {
        SecurityError::Tls(e.to_string())
    }
}

pub type Result<T, E = SecurityError> = std::result::Result<T, E>;
