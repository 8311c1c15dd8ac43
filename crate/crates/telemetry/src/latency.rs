use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TelemetryError};

pub const DEFAULT_CAPACITY: usize = 65_536;

/// Nearest-rank percentile of an ascending slice, `p` in basis points
/// (5000 = p50). Rank is `ceil(p·n / 10000)`, clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[f64], p_bp: u32) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len() as u64;
    let rank = (u64::from(p_bp) * n).div_ceil(10_000).clamp(1, n);
    Some(sorted[(rank - 1) as usize])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileSnapshot {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    /// Samples in the retained window.
    pub samples: usize,
    /// Sequence numbers (1-based, over all recorded samples) of the oldest and
    /// newest retained sample.
    pub first_seq: u64,
    pub last_seq: u64,
    pub total_count: u64,
    pub sum: f64,
}

impl PercentileSnapshot {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            p50: nearest_rank(&sorted, 5000)?,
            p95: nearest_rank(&sorted, 9500)?,
            p99: nearest_rank(&sorted, 9900)?,
            samples: sorted.len(),
            first_seq: 1,
            last_seq: sorted.len() as u64,
            total_count: sorted.len() as u64,
            sum: samples.iter().sum(),
        })
    }
}

#[derive(Debug)]
struct Ring {
    buf: Vec<f64>,
    capacity: usize,
    next: usize,
    count: u64,
    sum: f64,
}

impl Ring {
    fn new(capacity: usize) -> Self {
        Self {
            buf: Vec::with_capacity(capacity.min(4096)),
            capacity,
            next: 0,
            count: 0,
            sum: 0.0,
        }
    }

    fn push(&mut self, v: f64) {
        if self.buf.len() < self.capacity {
            self.buf.push(v);
        } else {
            self.buf[self.next] = v;
        }
        self.next = (self.next + 1) % self.capacity;
        self.count += 1;
        self.sum += v;
    }
}

/// Per-stage bounded windows of latency samples in milliseconds.
#[derive(Debug)]
pub struct LatencyRecorder {
    capacity: usize,
    stages: RwLock<BTreeMap<String, Arc<Mutex<Ring>>>>,
    rejected: AtomicU64,
}

impl Default for LatencyRecorder {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl LatencyRecorder {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            stages: RwLock::new(BTreeMap::new()),
            rejected: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn ring(&self, stage: &str) -> Arc<Mutex<Ring>> {
        if let Some(r) = self.stages.read().get(stage) {
            return r.clone();
        }
        self.stages
            .write()
            .entry(stage.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(Ring::new(self.capacity))))
            .clone()
    }

    /// Negative or non-finite values are rejected and counted.
    pub fn record(&self, stage: &str, latency_ms: f64) -> Result<()> {
        if !latency_ms.is_finite() || latency_ms < 0.0 {
            self.rejected.fetch_add(1, Ordering::Relaxed);
            return Err(TelemetryError::InvalidLatency(latency_ms));
        }
        self.ring(stage).lock().push(latency_ms);
        Ok(())
    }

    /// Instrumentation errors (rejected samples) so far.
    pub fn rejected(&self) -> u64 {
        self.rejected.load(Ordering::Relaxed)
    }

    pub fn stages(&self) -> Vec<String> {
        self.stages.read().keys().cloned().collect()
    }

    /// Retained samples for a stage, oldest first.
    pub fn window(&self, stage: &str) -> Vec<f64> {
        let Some(ring) = self.stages.read().get(stage).cloned() else {
            return Vec::new();
        };
        let r = ring.lock();
        if r.buf.len() < r.capacity {
            r.buf.clone()
        } else {
            let mut v = Vec::with_capacity(r.capacity);
            v.extend_from_slice(&r.buf[r.next..]);
            v.extend_from_slice(&r.buf[..r.next]);
            v
        }
    }

    /// Exact percentiles over the retained window. The ring is copied under
    /// its lock and sorted afterwards, so recorders wait only for the copy.
    pub fn snapshot(&self, stage: &str) -> Option<PercentileSnapshot> {
        let ring = self.stages.read().get(stage).cloned()?;
        let (mut samples, count, sum) = {
            let r = ring.lock();
            (r.buf.clone(), r.count, r.sum)
        };
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as u64;
        Some(PercentileSnapshot {
            p50: nearest_rank(&samples, 5000)?,
            p95: nearest_rank(&samples, 9500)?,
            p99: nearest_rank(&samples, 9900)?,
            samples: samples.len(),
            first_seq: count - n + 1,
            last_seq: count,
            total_count: count,
            sum,
        })
    }
}

/// Completed samples divided by the window length.
pub fn throughput_window(completed: u64, window_s: f64) -> Result<f64> {
    if !(window_s > 0.0) || !window_s.is_finite() {
        return Err(TelemetryError::InvalidWindow(window_s));
    }
    Ok(completed as f64 / window_s)
}
