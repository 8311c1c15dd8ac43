//! Per-principal token buckets.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketConfig {
    pub capacity: f64,
    pub refill_per_second: f64,
}

impl Default for BucketConfig {
    fn default() -> Self {
        Self {
            capacity: 100.0,
            refill_per_second: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateDecision {
    Allow { remaining: f64 },
    Throttle { retry_after: Duration },
}

impl RateDecision {
    pub fn is_allowed(&self) -> bool {
        matches!(self, RateDecision::Allow { .. })
    }
}

#[derive(Debug, Clone, Copy)]
struct Bucket {
    tokens: f64,
    updated: Duration,
}

#[derive(Debug)]
pub struct RateLimiter {
    config: BucketConfig,
    clock: Arc<dyn Clock>,
    buckets: Mutex<HashMap<String, Bucket>>,
}

impl RateLimiter {
    pub fn new(config: BucketConfig, clock: Arc<dyn Clock>) -> Self {
        assert!(config.capacity >= 1.0, "bucket capacity must hold one request");
        assert!(config.refill_per_second >= 0.0, "refill rate cannot be negative");
        Self {
            config,
            clock,
            buckets: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> BucketConfig {
        self.config
    }

    /// Takes one token from the principal's bucket, creating it full.
    pub fn check(&self, principal: &str) -> RateDecision {
        let now = self.clock.monotonic();
        let mut buckets = self.buckets.lock();
        let bucket = buckets.entry(principal.to_string()).or_insert(Bucket {
            tokens: self.config.capacity,
            updated: now,
        });
        let elapsed = now.saturating_sub(bucket.updated).as_secs_f64();
        bucket.tokens = (bucket.tokens + elapsed * self.config.refill_per_second).min(self.config.capacity);
        bucket.updated = now;
        if bucket.tokens >= 1.0 {
            bucket.tokens -= 1.0;
            RateDecision::Allow {
                remaining: bucket.tokens,
            }
        } else {
            let retry_after = if self.config.refill_per_second > 0.0 {
                Duration::from_secs_f64((1.0 - bucket.tokens) / self.config.refill_per_second)
            } else {
                Duration::MAX
            };
            RateDecision::Throttle { retry_after }
        }
    }

    pub fn available(&self, principal: &str) -> f64 {
        self.buckets
            .lock()
            .get(principal)
            .map_or(self.config.capacity, |b| b.tokens)
    }
}
