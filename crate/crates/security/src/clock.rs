use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;

/// Time source for expiry, TTL and refill decisions.
pub trait Clock: Send + Sync + std::fmt::Debug {
    /// Monotonic time since an arbitrary origin.
    fn monotonic(&self) -> Duration;
    /// Seconds since the Unix epoch.
    fn unix_seconds(&self) -> u64;
    fn unix_millis(&self) -> u64 {
        self.unix_seconds() * 1000
    }
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn monotonic(&self) -> Duration {
        self.origin.elapsed()
    }

    fn unix_seconds(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }

    fn unix_millis(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    }
}

/// Manually advanced clock for tests and simulations.
#[derive(Debug, Clone)]
pub struct ManualClock {
    inner: Arc<Mutex<(Duration, u64)>>,
}

impl ManualClock {
    pub fn new(unix_seconds: u64) -> Self {
        Self {
            inner: Arc::new(Mutex::new((Duration::ZERO, unix_seconds * 1000))),
        }
    }

    pub fn advance(&self, d: Duration) {
        let mut g = self.inner.lock();
        g.0 += d;
        g.1 += d.as_millis() as u64;
    }
}

impl Clock for ManualClock {
    fn monotonic(&self) -> Duration {
        self.inner.lock().0
    }

    fn unix_seconds(&self) -> u64 {
        self.inner.lock().1 / 1000
    }

    fn unix_millis(&self) -> u64 {
        self.inner.lock().1
    }
}
