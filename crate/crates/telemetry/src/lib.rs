//! Latency percentiles, throughput, threshold alerts and a text scrape format.

pub mod alerts;
mod error;
pub mod exposition;
pub mod latency;
pub mod utilization;

pub use alerts::{AlertEngine, AlertRule, AlertTransition, Comparator, TransitionKind};
pub use error::{Result, TelemetryError};
pub use exposition::MetricsRegistry;
pub use latency::{nearest_rank, throughput_window, LatencyRecorder, PercentileSnapshot};
pub use utilization::BusyGauge;
