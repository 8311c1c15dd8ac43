use thiserror::Error;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("latency must be finite and non-negative, got {0}")]
    InvalidLatency(f64),

    #[error("window must be positive, got {0} s")]
    InvalidWindow(f64),

    #[error("alert rule {rule:?} refers to unknown metric {metric:?}")]
    UnknownMetric { rule: String, metric: String },

    #[error("invalid alert rule {rule:?}: {reason}")]
    InvalidRule { rule: String, reason: String },

    #[error("invalid metric name {0:?}")]
    InvalidMetricName(String),

    #[error("alert config: {0}")]
    Config(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TelemetryError> = std::result::Result<T, E>;
