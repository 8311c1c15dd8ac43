use serde::{Deserialize, Serialize};

use crate::error::{EconError, Result};

/// Fraction of requests that find the function scaled to zero, for Poisson
/// arrivals at `rate` per second and scale-to-zero after `idle_timeout_s` of
/// idleness: `e^(−λT)`.
pub fn cold_fraction(rate: f64, idle_timeout_s: f64) -> Result<f64> {
    if !(rate > 0.0) || !(idle_timeout_s >= 0.0) {
        return Err(EconError::Domain(format!(
            "need rate > 0 and timeout >= 0, got {rate}, {idle_timeout_s}"
        )));
    }
    Ok((-rate * idle_timeout_s).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeepWarmReport {
    pub arrival_rate: f64,
    pub idle_timeout_s: f64,
    pub cold_fraction: f64,
    pub requests_per_hour: f64,
    pub cold_starts_per_hour: f64,
    /// Seconds of cold-start delay per hour that keep-warm would remove.
    pub delay_avoided_s_per_hour: f64,
    pub keep_warm_usd_per_hour: f64,
    /// Keep-warm spend per avoided cold start; `None` when nothing is avoided.
    pub usd_per_avoided_cold_start: Option<f64>,
    pub sla_budget: f64,
    pub recommend_keep_warm: bool,
}

/// Compares the cold-start delay keep-warm avoids against its hourly price.
/// Keep-warm is recommended when the cold fraction exceeds `sla_budget`.
pub fn keep_warm_tradeoff(
    rate: f64,
    idle_timeout_s: f64,
    keep_warm_usd_per_hour: f64,
    cold_penalty_s: f64,
    sla_budget: f64,
) -> Result<KeepWarmReport> {
    if [rate, idle_timeout_s, keep_warm_usd_per_hour, cold_penalty_s, sla_budget]
        .iter()
        .any(|v| !(*v >= 0.0))
    {
        return Err(EconError::Domain("keep-warm inputs must be non-negative".into()));
    }
    let frac = if rate == 0.0 { 0.0 } else { cold_fraction(rate, idle_timeout_s)? };
    let requests_per_hour = rate * 3600.0;
    let cold_starts = requests_per_hour * frac;
    Ok(KeepWarmReport {
        arrival_rate: rate,
        idle_timeout_s,
        cold_fraction: frac,
        requests_per_hour,
        cold_starts_per_hour: cold_starts,
        delay_avoided_s_per_hour: cold_starts * cold_penalty_s,
        keep_warm_usd_per_hour,
        usd_per_avoided_cold_start: (cold_starts > 0.0).then(|| keep_warm_usd_per_hour / cold_starts),
        sla_budget,
        recommend_keep_warm: frac > sla_budget,
    })
}
