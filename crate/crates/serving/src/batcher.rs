//! Bounded FIFO queue with size-or-deadline batch formation.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatcherConfig {
    pub max_batch: usize,
    #[serde(with = "millis")]
    pub max_delay: Duration,
    pub queue_capacity: usize,
}

impl Default for BatcherConfig {
    fn default() -> Self {
        Self {
            max_batch: 256,
            max_delay: Duration::from_millis(5),
            queue_capacity: 8192,
        }
    }
}

impl BatcherConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_batch == 0 {
            return Err("max_batch must be at least 1".into());
        }
        if self.queue_capacity == 0 {
            return Err("queue_capacity must be at least 1".into());
        }
        Ok(())
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        if !(ms >= 0.0 && ms.is_finite()) {
            return Err(serde::de::Error::custom("delay must be a non-negative number of milliseconds"));
        }
        Ok(Duration::from_secs_f64(ms / 1e3))
    }
}

#[derive(Debug)]
pub struct Queued<T> {
    pub item: T,
    pub enqueued_at: Instant,
}

#[derive(Debug)]
struct State<T> {
    items: VecDeque<Queued<T>>,
    closed: bool,
}

#[derive(Debug)]
pub struct BatchQueue<T> {
    config: BatcherConfig,
    state: Mutex<State<T>>,
    cv: Condvar,
}

impl<T> BatchQueue<T> {
    pub fn new(config: BatcherConfig) -> Self {
        Self {
            config,
            state: Mutex::new(State {
                items: VecDeque::new(),
                closed: false,
            }),
            cv: Condvar::new(),
        }
    }

    pub fn config(&self) -> BatcherConfig {
        self.config
    }

    /// Hands the item back when the queue is full or closed.
    pub fn enqueue(&self, item: T) -> Result<usize, T> {
        self.enqueue_at(item, Instant::now())
    }

    pub fn enqueue_at(&self, item: T, at: Instant) -> Result<usize, T> {
        let mut s = self.state.lock();
        if s.closed || s.items.len() >= self.config.queue_capacity {
            return Err(item);
        }
        s.items.push_back(Queued { item, enqueued_at: at });
        let depth = s.items.len();
        drop(s);
        // The former only needs waking to start a deadline or when a batch
        // fills; waking it per item costs a context switch each.
        if depth == 1 || depth == self.config.max_batch {
            self.cv.notify_one();
        }
        Ok(depth)
    }

    pub fn depth(&self) -> usize {
        self.state.lock().items.len()
    }

    /// Stops accepting items; queued items are still drained.
    pub fn close(&self) {
        self.state.lock().closed = true;
        self.cv.notify_all();
    }

    /// Non-blocking: a full batch if one is available, or everything up to
    /// `max_batch` once the oldest item has waited `max_delay` at `now`.
    pub fn try_batch(&self, now: Instant) -> Option<Vec<Queued<T>>> {
        let mut s = self.state.lock();
        self.ready(&mut s, now)
    }

    fn ready(&self, s: &mut State<T>, now: Instant) -> Option<Vec<Queued<T>>> {
        let oldest = s.items.front()?.enqueued_at;
        let due = now.saturating_duration_since(oldest) >= self.config.max_delay;
        if s.items.len() >= self.config.max_batch || due || s.closed {
            let n = s.items.len().min(self.config.max_batch);
            return Some(s.items.drain(..n).collect());
        }
        None
    }

    /// Blocks until a batch closes. Returns `None` once the queue is closed
    /// and empty.
    pub fn next_batch(&self) -> Option<Vec<Queued<T>>> {
        let mut s = self.state.lock();
        loop {
            let now = Instant::now();
            if let Some(b) = self.ready(&mut s, now) {
                return Some(b);
            }
            if s.closed {
                return None;
            }
            match s.items.front() {
                None => self.cv.wait(&mut s),
                Some(q) => {
                    let deadline = q.enqueued_at + self.config.max_delay;
                    self.cv.wait_until(&mut s, deadline);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(max_batch: usize, cap: usize) -> BatcherConfig {
        BatcherConfig {
            max_batch,
            max_delay: Duration::from_millis(5),
            queue_capacity: cap,
        }
    }

    #[test]
    fn thousand_arrivals_split_into_full_batches_then_remainder() {
        let q = BatchQueue::new(cfg(256, 2000));
        let t0 = Instant::now();
        for i in 0..1000 {
            q.enqueue_at(i, t0).unwrap();
        }
        let mut sizes = Vec::new();
        let mut order = Vec::new();
        while let Some(b) = q.try_batch(t0) {
            sizes.push(b.len());
            order.extend(b.into_iter().map(|x| x.item));
        }
        // the remainder waits for its deadline
        assert_eq!(sizes, vec![256, 256, 256]);
        let rest = q.try_batch(t0 + Duration::from_millis(5)).unwrap();
        sizes.push(rest.len());
        order.extend(rest.into_iter().map(|x| x.item));
        assert_eq!(sizes, vec![256, 256, 256, 232]);
        assert_eq!(order, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn capacity_rejects_overflow() {
        let q = BatchQueue::new(cfg(4, 10));
        let rejected = (0..11).filter(|&i| q.enqueue(i).is_err()).count();
        assert_eq!(rejected, 1);
        assert_eq!(q.depth(), 10);
    }

    #[test]
    fn single_item_waits_for_deadline() {
        let q = BatchQueue::new(cfg(256, 16));
        let t0 = Instant::now();
        assert_eq!(q.enqueue_at(7, t0), Ok(1));
        assert!(q.try_batch(t0 + Duration::from_millis(4)).is_none());
        assert_eq!(q.try_batch(t0 + Duration::from_millis(5)).unwrap().len(), 1);
    }

    #[test]
    fn max_batch_one_never_batches() {
        let q = BatchQueue::new(cfg(1, 16));
        let t0 = Instant::now();
        for i in 0..5 {
            q.enqueue_at(i, t0).unwrap();
        }
        let sizes: Vec<usize> = std::iter::from_fn(|| q.try_batch(t0).map(|b| b.len())).collect();
        assert_eq!(sizes, vec![1; 5]);
    }

    #[test]
    fn blocking_batch_closes_within_delay() {
        let q = BatchQueue::new(cfg(256, 16));
        let start = Instant::now();
        q.enqueue(1).unwrap();
        let b = q.next_batch().unwrap();
        let waited = start.elapsed();
        assert_eq!(b.len(), 1);
        assert!(waited >= Duration::from_millis(5));
        assert!(waited < Duration::from_millis(200), "{waited:?}");
    }

    #[test]
    fn close_drains_then_ends() {
        let q = BatchQueue::new(cfg(256, 16));
        q.enqueue(1).unwrap();
        q.close();
        assert!(q.enqueue(2).is_err());
        assert_eq!(q.next_batch().unwrap().len(), 1);
        assert!(q.next_batch().is_none());
    }

    proptest::proptest! {
        #[test]
        fn batches_preserve_fifo_and_respect_max(max_batch in 1usize..64, n in 0usize..500) {
            let q = BatchQueue::new(cfg(max_batch, 1000));
            let t0 = Instant::now();
            for i in 0..n {
                q.enqueue_at(i, t0).unwrap();
            }
            let mut order = Vec::new();
            while let Some(b) = q.try_batch(t0 + Duration::from_millis(5)) {
                proptest::prop_assert!(!b.is_empty() && b.len() <= max_batch);
                order.extend(b.into_iter().map(|x| x.item));
            }
            proptest::prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
        }
    }
}
