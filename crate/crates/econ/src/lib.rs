//! Cost per 1K inferences, GPU/CPU break-even and batch-size advice,
//! additive security-latency composition, and cold-start economics.

pub mod coldstart;
pub mod cost;
mod error;
pub mod recommend;
pub mod reference;
pub mod security_latency;

pub use coldstart::{cold_fraction, keep_warm_tradeoff, KeepWarmReport};
pub use cost::{break_even_batch, cost_per_1k, cost_report, round_to, CostRow, CurvePoint, PricingConfig, PricingModel};
pub use error::{EconError, Result};
pub use recommend::{recommend, recommend_table, Advice, BatchInterval, Recommendation, Thresholds};
pub use security_latency::{
    amortized_security_latency, security_overhead_table, ComponentLatencies, HandshakeMode, RowSource, SecurityRow,
};
