use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use parking_lot::Mutex;

/// Synthetic accelerator utilization: busy compute time as a percentage of
/// wall time, divided across `parallelism` executors.
#[derive(Debug)]
pub struct BusyGauge {
    busy_ns: AtomicU64,
    parallelism: u32,
    last: Mutex<(Instant, u64)>,
}

impl BusyGauge {
    pub fn new(parallelism: u32) -> Self {
        Self {
            busy_ns: AtomicU64::new(0),
            parallelism: parallelism.max(1),
            last: Mutex::new((Instant::now(), 0)),
        }
    }

    pub fn add_busy(&self, d: Duration) {
        self.busy_ns.fetch_add(d.as_nanos() as u64, Ordering::Relaxed);
    }

    /// Runs `f` and counts its duration as busy time.
    pub fn time<T>(&self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.add_busy(start.elapsed());
        out
    }

    /// Percentage busy since the previous call, in `[0, 100]`.
    pub fn sample(&self) -> f64 {
        self.sample_at(Instant::now())
    }

    pub fn sample_at(&self, now: Instant) -> f64 {
        let busy = self.busy_ns.load(Ordering::Relaxed);
        let mut last = self.last.lock();
        let wall = now.saturating_duration_since(last.0).as_nanos() as f64 * f64::from(self.parallelism);
        let delta = busy.saturating_sub(last.1) as f64;
        *last = (now, busy);
        if wall <= 0.0 {
            return 0.0;
        }
        (100.0 * delta / wall).clamp(0.0, 100.0)
    }
}

impl Default for BusyGauge {
    fn default() -> Self {
        Self::new(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_busy_reads_fifty_percent() {
        let g = BusyGauge::new(1);
        let start = g.last.lock().0;
        g.add_busy(Duration::from_millis(500));
        let u = g.sample_at(start + Duration::from_secs(1));
        assert!((u - 50.0).abs() < 1e-9);
        // nothing new since the last sample
        assert_eq!(g.sample_at(start + Duration::from_secs(2)), 0.0);
    }
}
