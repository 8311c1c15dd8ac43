//! The inference function: queue, batch former, workers and telemetry.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use bdaas_security::{Admission, ChainRequest, SecurityChain};
use bdaas_telemetry::exposition::{
    AUDIT_BUFFER_DEPTH, ERRORS_TOTAL, GPU_UTILIZATION, QUEUE_DEPTH, REQUESTS_TOTAL, THROUGHPUT,
};
use bdaas_telemetry::{BusyGauge, LatencyRecorder, MetricsRegistry};
use crossbeam_channel::{bounded, Receiver, Sender};
use serde::Serialize;
use tabnet_core::FeatureMatrix;
use tokio::sync::oneshot;

use crate::batcher::{BatchQueue, BatcherConfig, Queued};
use crate::error::{ServeError, ServiceError};
use crate::lifecycle::{Lifecycle, LifecycleConfig, ModelLoader, Probe};

pub const INFER_ENDPOINT: &str = "/infer";

/// One record to score.
#[derive(Debug, Clone)]
pub struct InferenceRequest {
    pub id: String,
    pub features: Vec<f64>,
    pub bearer: Option<String>,
    pub client_id: String,
    /// Bytes the security chain carries and digests; defaults to the
    /// features encoded as JSON.
    pub body: Vec<u8>,
    pub received_at: Instant,
}

impl InferenceRequest {
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Self {
        let body = serde_json::to_vec(&features).unwrap_or_default();
        Self {
            id: id.into(),
            features,
            bearer: None,
            client_id: "local".into(),
            body,
            received_at: Instant::now(),
        }
    }

    pub fn with_bearer(mut self, token: impl Into<String>) -> Self {
        self.bearer = Some(token.into());
        self
    }

    pub fn with_client(mut self, client_id: impl Into<String>) -> Self {
        self.client_id = client_id.into();
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageLatency {
    pub queue: f64,
    pub security: f64,
    pub compute: f64,
    /// Model load time paid by this request, zero when warm.
    pub cold_start: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResponse {
    pub id: String,
    pub prediction: usize,
    pub probabilities: Vec<f64>,
    pub masks: Vec<Vec<f64>>,
    pub importance: Vec<f64>,
    pub model_version: String,
    pub latency_ms: StageLatency,
    /// Per-component security time in ms.
    pub security_ms: BTreeMap<String, f64>,
    pub batch_size: usize,
}

pub type Reply = Result<InferenceResponse, ServeError>;

/// Receipt for an accepted request.
#[derive(Debug)]
pub struct Ticket(oneshot::Receiver<Reply>);

impl Ticket {
    /// Blocks the calling thread; must not be used inside an async runtime.
    pub fn wait(self) -> Reply {
        self.0.blocking_recv().unwrap_or(Err(ServeError::ShuttingDown))
    }

    pub async fn recv(self) -> Reply {
        self.0.await.unwrap_or(Err(ServeError::ShuttingDown))
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub batcher: BatcherConfig,
    pub lifecycle: LifecycleConfig,
    /// Batches scored concurrently.
    pub parallelism: usize,
    pub keep_warm_interval: Option<Duration>,
    pub latency_window: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            batcher: BatcherConfig::default(),
            lifecycle: LifecycleConfig::default(),
            parallelism: 1,
            keep_warm_interval: None,
            latency_window: 65_536,
        }
    }
}

struct Pending {
    request: InferenceRequest,
    reply: oneshot::Sender<Reply>,
}

#[derive(Debug, Default)]
struct Counters {
    accepted: AtomicU64,
    backpressure: AtomicU64,
    responses: AtomicU64,
    errors: AtomicU64,
    forward_passes: AtomicU64,
    retries: AtomicU64,
    batches: AtomicU64,
    records_scored: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ServiceStats {
    pub accepted: u64,
    pub backpressure: u64,
    pub responses: u64,
    pub errors: u64,
    pub forward_passes: u64,
    pub retries: u64,
    pub batches: u64,
    pub records_scored: u64,
}

struct Shared {
    queue: BatchQueue<Pending>,
    lifecycle: Lifecycle,
    chain: Arc<SecurityChain>,
    latency: LatencyRecorder,
    metrics: MetricsRegistry,
    busy: BusyGauge,
    counters: Counters,
    started: Instant,
    stopping: AtomicBool,
}

pub struct InferenceService {
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    // dropping this wakes the housekeeping thread for shutdown
    stop_tx: Option<Sender<()>>,
}

impl std::fmt::Debug for InferenceService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InferenceService")
            .field("stats", &self.stats())
            .finish_non_exhaustive()
    }
}

impl InferenceService {
    pub fn start(config: ServiceConfig, loader: ModelLoader, chain: Arc<SecurityChain>) -> Result<Self, ServiceError> {
        config.batcher.validate().map_err(ServiceError::Config)?;
        if config.parallelism == 0 {
            return Err(ServiceError::Config("parallelism must be at least 1".into()));
        }
        let shared = Arc::new(Shared {
            queue: BatchQueue::new(config.batcher),
            lifecycle: Lifecycle::new(config.lifecycle, loader),
            chain,
            latency: LatencyRecorder::new(config.latency_window),
            metrics: MetricsRegistry::new(),
            busy: BusyGauge::new(config.parallelism as u32),
            counters: Counters::default(),
            started: Instant::now(),
            stopping: AtomicBool::new(false),
        });
        let (tx, rx) = bounded::<Vec<Queued<Pending>>>(config.parallelism);
        let mut threads = Vec::new();
        let (stop_tx, stop_rx) = bounded::<()>(0);
        let s = shared.clone();
        threads.push(spawn("batch-former", move || batch_former(&s, tx))?);
        for i in 0..config.parallelism {
            let s = shared.clone();
            let rx: Receiver<_> = rx.clone();
            threads.push(spawn(&format!("infer-worker-{i}"), move || {
                for batch in rx.iter() {
                    invoke(&s, batch);
                }
            })?);
        }
        if config.keep_warm_interval.is_some() || config.lifecycle.idle_timeout.is_some() {
            let s = shared.clone();
            let interval = config
                .keep_warm_interval
                .or(config.lifecycle.idle_timeout.map(|t| t / 4))
                .unwrap_or(Duration::from_secs(1))
                .max(Duration::from_millis(1));
            let ping = config.keep_warm_interval.is_some();
            threads.push(spawn("housekeeping", move || housekeeping(&s, &stop_rx, interval, ping))?);
        }
        Ok(Self {
            shared,
            threads,
            stop_tx: Some(stop_tx),
        })
    }

    /// Queues a request. A full queue is refused immediately.
    pub fn submit(&self, request: InferenceRequest) -> Result<Ticket, ServeError> {
        let (tx, rx) = oneshot::channel();
        let pending = Pending { request, reply: tx };
        match self.shared.queue.enqueue(pending) {
            Ok(depth) => {
                self.shared.counters.accepted.fetch_add(1, Ordering::Relaxed);
                let _ = self.shared.metrics.set_gauge(QUEUE_DEPTH, &[], depth as f64);
                Ok(Ticket(rx))
            }
            Err(_) => {
                self.shared.counters.backpressure.fetch_add(1, Ordering::Relaxed);
                let e = ServeError::Backpressure;
                count_error(&self.shared, &e);
                Err(e)
            }
        }
    }

    /// Submits and waits. Blocking; not for use inside an async runtime.
    pub fn infer(&self, request: InferenceRequest) -> Reply {
        self.submit(request)?.wait()
    }

    pub fn probe(&self) -> Probe {
        self.shared.lifecycle.probe()
    }

    pub fn lifecycle(&self) -> &Lifecycle {
        &self.shared.lifecycle
    }

    /// Loads the model ahead of traffic.
    pub fn warm_up(&self) -> Result<bool, String> {
        self.shared.lifecycle.ping()
    }

    pub fn model_version(&self) -> Option<String> {
        self.shared.lifecycle.model_version()
    }

    pub fn chain(&self) -> &SecurityChain {
        &self.shared.chain
    }

    pub fn latency(&self) -> &LatencyRecorder {
        &self.shared.latency
    }

    pub fn metrics(&self) -> &MetricsRegistry {
        &self.shared.metrics
    }

    pub fn queue_depth(&self) -> usize {
        self.shared.queue.depth()
    }

    pub fn stats(&self) -> ServiceStats {
        let c = &self.shared.counters;
        ServiceStats {
            accepted: c.accepted.load(Ordering::Relaxed),
            backpressure: c.backpressure.load(Ordering::Relaxed),
            responses: c.responses.load(Ordering::Relaxed),
            errors: c.errors.load(Ordering::Relaxed),
            forward_passes: c.forward_passes.load(Ordering::Relaxed),
            retries: c.retries.load(Ordering::Relaxed),
            batches: c.batches.load(Ordering::Relaxed),
            records_scored: c.records_scored.load(Ordering::Relaxed),
        }
    }

    /// Metrics in text exposition format, with gauges refreshed.
    pub fn render_metrics(&self) -> String {
        let s = &self.shared;
        let _ = s.metrics.set_gauge(QUEUE_DEPTH, &[], s.queue.depth() as f64);
        let _ = s.metrics.set_gauge(GPU_UTILIZATION, &[], s.busy.sample());
        let elapsed = s.started.elapsed().as_secs_f64().max(1e-9);
        let scored = s.counters.records_scored.load(Ordering::Relaxed) as f64;
        let _ = s.metrics.set_gauge(THROUGHPUT, &[], scored / elapsed);
        let audit_depth = s.chain.audit_log().map_or(0, |a| a.stats().depth);
        let _ = s.metrics.set_gauge(AUDIT_BUFFER_DEPTH, &[], audit_depth as f64);
        s.metrics.render(Some(&s.latency))
    }

    /// Stops intake, finishes queued work and joins all threads.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.stopping.store(true, Ordering::Relaxed);
        self.shared.queue.close();
        self.stop_tx.take();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        if let Some(a) = self.shared.chain.audit_log() {
            a.flush();
        }
    }
}

impl Drop for InferenceService {
    fn drop(&mut self) {
        self.stop();
    }
}

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> Result<JoinHandle<()>, ServiceError> {
    Ok(std::thread::Builder::new().name(name.to_string()).spawn(f)?)
}

fn batch_former(s: &Shared, tx: Sender<Vec<Queued<Pending>>>) {
    while let Some(batch) = s.queue.next_batch() {
        let _ = s.metrics.set_gauge(QUEUE_DEPTH, &[], s.queue.depth() as f64);
        if let Err(e) = tx.send(batch) {
            for p in e.into_inner() {
                let _ = p.item.reply.send(Err(ServeError::ShuttingDown));
            }
        }
    }
}

fn housekeeping(s: &Shared, stop: &Receiver<()>, interval: Duration, ping: bool) {
    while !s.stopping.load(Ordering::Relaxed) {
        if stop.recv_timeout(interval) != Err(crossbeam_channel::RecvTimeoutError::Timeout) {
            return;
        }
        if ping {
            if let Err(e) = s.lifecycle.ping() {
                tracing::warn!(error = %e, "keep-warm ping failed");
            }
        } else {
            s.lifecycle.reap_idle();
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn count_error(s: &Shared, e: &ServeError) {
    s.counters.errors.fetch_add(1, Ordering::Relaxed);
    let reason = e.reason();
    let _ = s.metrics.inc_counter(ERRORS_TOTAL, &[("reason", &reason)], 1);
    let _ = s.metrics.inc_counter(REQUESTS_TOTAL, &[("outcome", "error")], 1);
}

fn respond(s: &Shared, p: Pending, reply: Reply) {
    match &reply {
        Ok(r) => {
            s.counters.responses.fetch_add(1, Ordering::Relaxed);
            let _ = s.metrics.inc_counter(REQUESTS_TOTAL, &[("outcome", "ok")], 1);
            let l = r.latency_ms;
            for (stage, v) in [
                ("queue", l.queue),
                ("security", l.security),
                ("compute", l.compute),
                ("total", l.total),
            ] {
                if let Err(e) = s.latency.record(stage, v) {
                    tracing::warn!(error = %e, "latency sample dropped");
                }
            }
        }
        Err(e) => count_error(s, e),
    }
    let _ = p.reply.send(reply);
}

/// Scores one batch: security per request, one forward pass for the
/// admitted requests (retried once on failure), then audit and replies.
fn invoke(s: &Shared, batch: Vec<Queued<Pending>>) {
    let dispatched = Instant::now();
    s.counters.batches.fetch_add(1, Ordering::Relaxed);
    let lease = match s.lifecycle.acquire() {
        Ok(l) => l,
        Err(e) => {
            for q in batch {
                respond(s, q.item, Err(ServeError::Unavailable(e.clone())));
            }
            return;
        }
    };
    let cold_ms = if lease.cold { ms(lease.waited) } else { 0.0 };
    let model = lease.model.clone();
    let width = model.feature_count();
    let version = model.version().to_string();

    struct Admitted {
        p: Pending,
        queue_ms: f64,
        timings: bdaas_security::StageTimings,
        principal: String,
    }
    let mut admitted = Vec::with_capacity(batch.len());
    for q in batch {
        let p = q.item;
        let queue_ms = ms(dispatched.saturating_duration_since(p.request.received_at));
        let rows = [p.request.features.clone()];
        let creq = ChainRequest {
            client_id: &p.request.client_id,
            bearer: p.request.bearer.as_deref(),
            endpoint: INFER_ENDPOINT,
            rows: Some(&rows),
            body: &p.request.body,
        };
        match s.chain.admit(&creq) {
            Admission::Admitted(a) => {
                if p.request.features.len() != width || p.request.features.iter().any(|v| !v.is_finite()) {
                    let mut t = a.timings;
                    let reason = format!("expected {width} finite features, got {}", p.request.features.len());
                    s.chain
                        .record_outcome(&creq, &a.principal, &format!("bad request: {reason}"), &version, BTreeMap::new(), &mut t);
                    respond(s, p, Err(ServeError::BadRequest(reason)));
                    continue;
                }
                admitted.push(Admitted {
                    queue_ms,
                    timings: a.timings,
                    principal: a.principal,
                    p,
                });
            }
            Admission::Rejected(mut r) => {
                let outcome = format!("rejected by {}: {}", r.stage, r.reason);
                s.chain
                    .record_outcome(&creq, &r.principal, &outcome, &version, BTreeMap::new(), &mut r.timings);
                respond(
                    s,
                    p,
                    Err(ServeError::Rejected {
                        stage: r.stage.to_string(),
                        reason: r.reason,
                        status: r.status,
                        retry_after_ms: r.retry_after.map(|d| d.as_millis() as u64),
                    }),
                );
            }
        }
    }
    if admitted.is_empty() {
        return;
    }

    let rows: Vec<Vec<f64>> = admitted.iter().map(|a| a.p.request.features.clone()).collect();
    let compute_start = Instant::now();
    let outputs = FeatureMatrix::from_rows(&rows)
        .map_err(|e| e.to_string())
        .and_then(|m| {
            s.counters.forward_passes.fetch_add(1, Ordering::Relaxed);
            match s.busy.time(|| model.predict(&m)) {
                Ok(o) => Ok(o),
                Err(first) => {
                    tracing::warn!(error = %first, "forward pass failed, retrying once");
                    s.counters.retries.fetch_add(1, Ordering::Relaxed);
                    s.counters.forward_passes.fetch_add(1, Ordering::Relaxed);
                    s.busy.time(|| model.predict(&m))
                }
            }
        })
        .and_then(|o| {
            if o.len() == rows.len() {
                Ok(o)
            } else {
                Err(format!("model returned {} outputs for {} rows", o.len(), rows.len()))
            }
        });
    let compute_ms = ms(compute_start.elapsed());
    drop(lease);

    let batch_size = admitted.len();
    match outputs {
        Ok(outputs) => {
            s.counters.records_scored.fetch_add(batch_size as u64, Ordering::Relaxed);
            for (a, out) in admitted.into_iter().zip(outputs) {
                let Admitted {
                    p,
                    queue_ms,
                    mut timings,
                    principal,
                } = a;
                let creq = ChainRequest {
                    client_id: &p.request.client_id,
                    bearer: p.request.bearer.as_deref(),
                    endpoint: INFER_ENDPOINT,
                    rows: None,
                    body: &p.request.body,
                };
                let mut attrs = BTreeMap::new();
                attrs.insert("request_id".to_string(), serde_json::Value::String(p.request.id.clone()));
                attrs.insert("prediction".to_string(), serde_json::Value::from(out.predicted_class));
                s.chain.record_outcome(&creq, &principal, "ok", &version, attrs, &mut timings);
                let security_ms: BTreeMap<String, f64> =
                    timings.stages.iter().map(|(c, d)| (c.to_string(), ms(*d))).collect();
                let total = ms(p.request.received_at.elapsed());
                let response = InferenceResponse {
                    id: p.request.id.clone(),
                    prediction: out.predicted_class,
                    probabilities: out.probabilities,
                    masks: out.explanation.step_masks,
                    importance: out.explanation.aggregate_importance,
                    model_version: version.clone(),
                    latency_ms: StageLatency {
                        queue: queue_ms,
                        security: timings.total_ms(),
                        compute: compute_ms,
                        cold_start: cold_ms,
                        total,
                    },
                    security_ms,
                    batch_size,
                };
                respond(s, p, Ok(response));
            }
        }
        Err(e) => {
            for a in admitted {
                let mut t = a.timings;
                let creq = ChainRequest {
                    client_id: &a.p.request.client_id,
                    bearer: a.p.request.bearer.as_deref(),
                    endpoint: INFER_ENDPOINT,
                    rows: None,
                    body: &a.p.request.body,
                };
                s.chain
                    .record_outcome(&creq, &a.principal, &format!("error: {e}"), &version, BTreeMap::new(), &mut t);
                respond(s, a.p, Err(ServeError::Compute(e.clone())));
            }
        }
    }
}
