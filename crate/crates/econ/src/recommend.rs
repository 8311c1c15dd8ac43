use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{EconError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Advice {
    Cpu,
    Mixed,
    GpuCostEffective,
    GpuStronglyPreferred,
}

impl fmt::Display for Advice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Advice::Cpu => "cpu",
            Advice::Mixed => "mixed",
            Advice::GpuCostEffective => "gpu_cost_effective",
            Advice::GpuStronglyPreferred => "gpu_strongly_preferred",
        })
    }
}

/// Cut points on the cost ratio `gpu / cpu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Above this ratio the CPU is recommended.
    pub cpu_above: f64,
    /// `[mixed_from, cpu_above]` is mixed.
    pub mixed_from: f64,
    /// `[gpu_from, mixed_from)` is GPU cost-effective; below it GPU is strongly preferred.
    pub gpu_from: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            cpu_above: 1.25,
            mixed_from: 0.8,
            gpu_from: 0.4,
        }
    }
}

/// Relative slack when comparing a ratio against a cut point, so that costs
/// such as 0.0005/0.0004 land on the boundary they are printed at.
const BOUNDARY_TOLERANCE: f64 = 1e-9;

fn above(r: f64, t: f64) -> bool {
    r > t * (1.0 + BOUNDARY_TOLERANCE)
}

fn at_least(r: f64, t: f64) -> bool {
    r >= t * (1.0 - BOUNDARY_TOLERANCE)
}

impl Thresholds {
    pub fn classify(&self, ratio: f64) -> Advice {
        if above(ratio, self.cpu_above) {
            Advice::Cpu
        } else if at_least(ratio, self.mixed_from) {
            Advice::Mixed
        } else if at_least(ratio, self.gpu_from) {
            Advice::GpuCostEffective
        } else {
            Advice::GpuStronglyPreferred
        }
    }
}

/// Half-open batch interval `[lo, hi)`; `hi = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchInterval {
    pub lo: u32,
    pub hi: Option<u32>,
}

impl fmt::Display for BatchInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            Some(hi) => write!(f, "{}-{}", self.lo, hi),
            None => write!(f, "{}+", self.lo),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub interval: BatchInterval,
    pub advice: Advice,
    pub gpu_cost: f64,
    pub cpu_cost: f64,
    pub ratio: f64,
}

pub fn recommend(interval: BatchInterval, gpu_cost: f64, cpu_cost: f64, thresholds: &Thresholds) -> Result<Recommendation> {
    if !(gpu_cost > 0.0) || !(cpu_cost > 0.0) {
        return Err(EconError::Domain(format!(
            "costs must be positive, got gpu {gpu_cost}, cpu {cpu_cost}"
        )));
    }
    let ratio = gpu_cost / cpu_cost;
    Ok(Recommendation {
        interval,
        advice: thresholds.classify(ratio),
        gpu_cost,
        cpu_cost,
        ratio,
    })
}

/// Recommendations for consecutive intervals. Each `(lo, gpu, cpu)` starts an
/// interval that ends where the next begins; the last is unbounded.
pub fn recommend_table(points: &[(u32, f64, f64)], thresholds: &Thresholds) -> Result<Vec<Recommendation>> {
    if points.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(EconError::Config("interval starts must be strictly increasing".into()));
    }
    points
        .iter()
        .enumerate()
        .map(|(i, &(lo, gpu, cpu))| {
            let hi = points.get(i + 1).map(|p| p.0);
            recommend(BatchInterval { lo, hi }, gpu, cpu, thresholds)
        })
        .collect()
}
