//! Function lifecycle: Unloaded, Loading, Warm, Draining.
//!
//! The first request after scale-to-zero triggers a load that takes at
//! least the configured delay. Warm state lapses back to Unloaded after the
//! idle timeout.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::Serialize;

use crate::predictor::Predictor;

pub type ModelLoader = Arc<dyn Fn() -> Result<Arc<dyn Predictor>, String> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Unloaded,
    Loading,
    Warm,
    Draining,
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LifecycleState::Unloaded => "unloaded",
            LifecycleState::Loading => "loading",
            LifecycleState::Warm => "warm",
            LifecycleState::Draining => "draining",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Probe {
    pub live: bool,
    pub ready: bool,
    pub state: LifecycleState,
    pub cause: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct LifecycleConfig {
    /// Simulated model-load time paid on every cold start.
    pub load_delay: Duration,
    /// Scale to zero after this long without activity; `None` keeps the
    /// model resident.
    pub idle_timeout: Option<Duration>,
    /// Loading for longer than this marks the function as wedged.
    pub wedge_after: Duration,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        Self {
            load_delay: Duration::from_millis(3500),
            idle_timeout: Some(Duration::from_secs(300)),
            wedge_after: Duration::from_secs(60),
        }
    }
}

struct Inner {
    state: LifecycleState,
    model: Option<Arc<dyn Predictor>>,
    last_activity: Instant,
    loading_since: Option<Instant>,
    last_error: Option<String>,
    in_flight: usize,
    loads: u64,
}

pub struct Lifecycle {
    config: LifecycleConfig,
    loader: ModelLoader,
    inner: Mutex<Inner>,
    cv: Condvar,
}

impl fmt::Debug for Lifecycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Lifecycle")
            .field("config", &self.config)
            .field("state", &self.state())
            .finish_non_exhaustive()
    }
}

/// Holds the model for the duration of one batch. Draining waits for all
/// outstanding leases.
pub struct Lease<'a> {
    owner: &'a Lifecycle,
    pub model: Arc<dyn Predictor>,
    /// True when this acquisition paid the load delay.
    pub cold: bool,
    /// Time spent waiting for the model to become warm.
    pub waited: Duration,
}

impl Drop for Lease<'_> {
    fn drop(&mut self) {
        let mut g = self.owner.inner.lock();
        g.in_flight -= 1;
        g.last_activity = Instant::now();
        drop(g);
        self.owner.cv.notify_all();
    }
}

impl Lifecycle {
    pub fn new(config: LifecycleConfig, loader: ModelLoader) -> Self {
        Self {
            config,
            loader,
            inner: Mutex::new(Inner {
                state: LifecycleState::Unloaded,
                model: None,
                last_activity: Instant::now(),
                loading_since: None,
                last_error: None,
                in_flight: 0,
                loads: 0,
            }),
            cv: Condvar::new(),
        }
    }

    pub fn config(&self) -> LifecycleConfig {
        self.config
    }

    pub fn state(&self) -> LifecycleState {
        let mut g = self.inner.lock();
        self.expire_if_idle(&mut g, Instant::now());
        g.state
    }

    /// Version of the resident model, if any.
    pub fn model_version(&self) -> Option<String> {
        self.inner.lock().model.as_ref().map(|m| m.version().to_string())
    }

    /// Completed model loads so far.
    pub fn loads(&self) -> u64 {
        self.inner.lock().loads
    }

    fn expire_if_idle(&self, g: &mut Inner, now: Instant) {
        if let Some(timeout) = self.config.idle_timeout {
            if g.state == LifecycleState::Warm
                && g.in_flight == 0
                && now.saturating_duration_since(g.last_activity) > timeout
            {
                tracing::debug!("idle timeout reached, scaling to zero");
                g.state = LifecycleState::Unloaded;
                g.model = None;
            }
        }
    }

    /// Applies the idle timeout now; returns true if the model was unloaded.
    pub fn reap_idle(&self) -> bool {
        let mut g = self.inner.lock();
        let before = g.state;
        self.expire_if_idle(&mut g, Instant::now());
        before == LifecycleState::Warm && g.state == LifecycleState::Unloaded
    }

    /// Returns a warm model, loading it first if necessary.
    pub fn acquire(&self) -> Result<Lease<'_>, String> {
        let start = Instant::now();
        let mut g = self.inner.lock();
        self.expire_if_idle(&mut g, start);
        let mut cold = false;
        loop {
            match g.state {
                LifecycleState::Warm => {
                    let model = g.model.clone().expect("warm state holds a model");
                    g.in_flight += 1;
                    g.last_activity = Instant::now();
                    return Ok(Lease {
                        owner: self,
                        model,
                        cold,
                        waited: start.elapsed(),
                    });
                }
                LifecycleState::Loading => {
                    self.cv.wait(&mut g);
                    if g.state == LifecycleState::Unloaded {
                        return Err(g.last_error.clone().unwrap_or_else(|| "model load failed".into()));
                    }
                }
                LifecycleState::Draining => return Err("function is draining".into()),
                LifecycleState::Unloaded => {
                    cold = true;
                    g.state = LifecycleState::Loading;
                    g.loading_since = Some(Instant::now());
                    drop(g);
                    let load_start = Instant::now();
                    let loaded = (self.loader)();
                    // the load never completes faster than the configured delay
                    let spent = load_start.elapsed();
                    if spent < self.config.load_delay {
                        std::thread::sleep(self.config.load_delay - spent);
                    }
                    g = self.inner.lock();
                    g.loading_since = None;
                    match loaded {
                        Ok(m) => {
                            g.state = LifecycleState::Warm;
                            g.model = Some(m);
                            g.last_error = None;
                            g.loads += 1;
                            g.last_activity = Instant::now();
                            self.cv.notify_all();
                        }
                        Err(e) => {
                            tracing::error!(error = %e, "model load failed");
                            g.state = LifecycleState::Unloaded;
                            g.last_error = Some(e.clone());
                            self.cv.notify_all();
                            return Err(e);
                        }
                    }
                }
            }
        }
    }

    /// Keep-warm ping: counts as activity, loading the model if it has
    /// already scaled to zero. Returns whether the ping hit a cold function.
    pub fn ping(&self) -> Result<bool, String> {
        self.acquire().map(|l| l.cold)
    }

    /// Stops serving, waits for in-flight batches, then unloads.
    pub fn drain(&self) {
        let mut g = self.inner.lock();
        if g.state == LifecycleState::Unloaded {
            return;
        }
        while g.state == LifecycleState::Loading {
            self.cv.wait(&mut g);
        }
        g.state = LifecycleState::Draining;
        while g.in_flight > 0 {
            self.cv.wait(&mut g);
        }
        g.state = LifecycleState::Unloaded;
        g.model = None;
        self.cv.notify_all();
    }

    /// Drains and loads a fresh model instance.
    pub fn reload(&self) -> Result<(), String> {
        self.drain();
        self.acquire().map(|_| ())
    }

    pub fn probe(&self) -> Probe {
        let now = Instant::now();
        let mut g = self.inner.lock();
        self.expire_if_idle(&mut g, now);
        let wedged = g
            .loading_since
            .is_some_and(|t| now.saturating_duration_since(t) > self.config.load_delay + self.config.wedge_after);
        let cause = if wedged {
            Some("model load has not finished".into())
        } else if g.state != LifecycleState::Warm {
            g.last_error
                .clone()
                .or_else(|| Some(format!("function is {}", g.state)))
        } else {
            None
        };
        Probe {
            live: !wedged,
            ready: g.state == LifecycleState::Warm,
            state: g.state,
            cause,
        }
    }
}
