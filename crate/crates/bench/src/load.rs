//! Load generation against an in-process inference service.
//!
//! Each batch size gets its own service and security chain. The model is
//! warmed before anything is measured, repetitions alternate between batch
//! sizes, and every repetition first completes its warmup requests, which
//! are discarded. Statistics cover only the
//! measured requests of each repetition.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use bdaas_security::{Component, Role, SecurityChainConfig, SecurityFixture, SystemClock};
use bdaas_serving::{
    BatcherConfig, InferenceRequest, InferenceResponse, InferenceService, LifecycleConfig, ModelLoader, Predictor,
    ServiceConfig, Ticket,
};
use bdaas_telemetry::PercentileSnapshot;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use tabnet_core::FeatureMatrix;

use crate::error::{BenchError, Result};
use crate::scenario::{check_version, Arrival, Scenario, SCHEMA_VERSION};
use crate::stats::mean;

/// Most driver threads used for closed-loop load; each keeps a window of
/// outstanding requests.
const MAX_DRIVERS: usize = 8;

/// A mean batch below this share of the limit under closed-loop load means
/// the harness, not the service, bounded throughput.
const SATURATION_SHARE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub index: usize,
    pub requests: usize,
    pub completed: usize,
    pub errors: usize,
    /// Requests refused by a full queue (a subset of `errors`).
    pub backpressure: usize,
    pub wall_s: f64,
    /// Completed requests per second of wall time.
    pub throughput: f64,
    /// Request latency in ms, from arrival at the service to reply.
    pub latency: Option<PercentileSnapshot>,
    /// Per-request stage means, ms.
    pub queue_ms: f64,
    pub security_ms: f64,
    pub compute_ms: f64,
    /// Mean per-request time of each security component, ms.
    pub security_components: BTreeMap<String, f64>,
    pub mean_batch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPoint {
    pub batch: usize,
    /// Time to load the model before measuring, excluded from statistics.
    pub cold_start_ms: f64,
    pub repetitions: Vec<Repetition>,
    pub flags: Vec<String>,
}

impl BatchPoint {
    pub fn throughputs(&self) -> Vec<f64> {
        self.repetitions.iter().map(|r| r.throughput).collect()
    }

    pub fn security_means(&self) -> Vec<f64> {
        self.repetitions.iter().map(|r| r.security_ms).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub fingerprint: String,
    pub model_version: String,
    pub feature_count: usize,
    pub points: Vec<BatchPoint>,
    /// True when any request failed; the numbers cover what completed.
    pub incomplete: bool,
}

impl MeasurementSet {
    pub fn file_name(&self) -> String {
        format!("measurements-{}.json", self.scenario.config_hash())
    }

    pub fn persist(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

/// Reads every `measurements*.json` in `dir`, ordered by file name.
pub fn load_measurements(dir: &Path) -> Result<Vec<MeasurementSet>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("measurements") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let set: MeasurementSet = crate::scenario::read_json(p)?;
            check_version(set.schema_version)?;
            Ok(set)
        })
        .collect()
}

struct Outcome {
    response: std::result::Result<InferenceResponse, String>,
    backpressure: bool,
}

fn service_config(scenario: &Scenario, batch: usize) -> ServiceConfig {
    let outstanding = match scenario.arrival {
        Arrival::ClosedLoop { clients } => clients_for(clients, batch),
        Arrival::Poisson { .. } => scenario.requests_per_repetition,
    };
    ServiceConfig {
        batcher: BatcherConfig {
            max_batch: batch,
            max_delay: Duration::from_secs_f64(scenario.max_delay_ms / 1e3),
            queue_capacity: (outstanding + batch).max(1024),
        },
        lifecycle: LifecycleConfig {
            load_delay: Duration::from_secs_f64(scenario.cold_start_ms / 1e3),
            idle_timeout: None,
            wedge_after: Duration::from_secs(60),
        },
        parallelism: scenario.parallelism,
        keep_warm_interval: None,
        latency_window: 65_536,
    }
}

fn clients_for(clients: usize, batch: usize) -> usize {
    if clients == 0 {
        2 * batch
    } else {
        clients
    }
}

/// Runs every batch size of `scenario`, drawing request rows from `pool`.
/// Audit logs (when the preset audits) go under `work_dir`.
pub fn run_scenario(
    scenario: &Scenario,
    model: Arc<dyn Predictor>,
    pool: &FeatureMatrix,
    work_dir: &Path,
) -> Result<MeasurementSet> {
    scenario.validate()?;
    if pool.rows() == 0 {
        return Err(BenchError::Data("request pool is empty".into()));
    }
    if pool.cols() != model.feature_count() {
        return Err(BenchError::Data(format!(
            "pool has {} columns, model expects {}",
            pool.cols(),
            model.feature_count()
        )));
    }
    std::fs::create_dir_all(work_dir)?;
    let security = SecurityChainConfig::parse(&scenario.security_preset)?;
    let fixture = SecurityFixture::generate(Arc::new(SystemClock::default()), Duration::ZERO)?;
    let token = fixture.token(Role::HrAnalyst, "bench-client", 24 * 3600);

    struct Running {
        batch: usize,
        svc: InferenceService,
        cold_start_ms: f64,
        repetitions: Vec<Repetition>,
    }
    let mut running = Vec::with_capacity(scenario.batch_sizes.len());
    for &batch in &scenario.batch_sizes {
        let audit = work_dir.join(format!("audit-{}-b{batch}.log", scenario.config_hash()));
        let audit = security.has(Component::Audit).then_some(audit.as_path());
        let chain = fixture.chain(security.clone(), pool.cols(), audit)?;
        let predictor = model.clone();
        let loader: ModelLoader = Arc::new(move || Ok(predictor.clone()));
        let svc = InferenceService::start(service_config(scenario, batch), loader, Arc::new(chain))
            .map_err(|e| BenchError::Run(e.to_string()))?;
        let t = Instant::now();
        svc.warm_up().map_err(BenchError::Run)?;
        running.push(Running {
            batch,
            svc,
            cold_start_ms: t.elapsed().as_secs_f64() * 1e3,
            repetitions: Vec::with_capacity(scenario.repetitions),
        });
    }

    // Repetitions rotate across batch sizes so that drift in machine speed
    // lands on every batch size alike instead of on whichever ran last.
    let k = running.len();
    for rep in 0..scenario.repetitions {
        for j in 0..k {
            let r = &mut running[(rep + j) % k];
            let batch = r.batch;
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ ((batch as u64) << 32) ^ rep as u64);
            let mut make = |n: usize, tag: &str| -> Vec<InferenceRequest> {
                (0..n)
                    .map(|i| {
                        let row = pool.row(rng.gen_range(0..pool.rows())).to_vec();
                        let mut req = InferenceRequest::new(format!("{tag}{rep}-{i}"), row).with_client("bench");
                        if security.has(Component::Jwt) {
                            req = req.with_bearer(token.clone());
                        }
                        req
                    })
                    .collect()
            };
            let warmup = make(scenario.warmup_requests, "w");
            let measured = make(scenario.requests_per_repetition, "m");
            drive(&r.svc, scenario, batch, warmup, &mut rng)?;
            let start = Instant::now();
            let outcomes = drive(&r.svc, scenario, batch, measured, &mut rng)?;
            let wall_s = start.elapsed().as_secs_f64();
            r.repetitions.push(summarize(rep, outcomes, wall_s));
        }
    }

    let mut points = Vec::with_capacity(k);
    for r in running {
        r.svc.shutdown();
        let Running {
            batch,
            cold_start_ms,
            repetitions,
            ..
        } = r;
        let mut flags = Vec::new();
        let refused: usize = repetitions.iter().map(|r| r.backpressure).sum();
        if refused > 0 {
            flags.push(format!("backpressure: {refused} requests refused by a full queue"));
        }
        let failed: usize = repetitions.iter().map(|r| r.errors - r.backpressure).sum();
        if failed > 0 {
            flags.push(format!("errors: {failed} requests failed"));
        }
        if let Arrival::ClosedLoop { clients } = scenario.arrival {
            let mean_batch = mean(&repetitions.iter().map(|r| r.mean_batch).collect::<Vec<_>>());
            if clients_for(clients, batch) >= batch && mean_batch < SATURATION_SHARE * batch as f64 {
                flags.push(format!(
                    "harness saturation: mean batch {mean_batch:.1} is below half the limit {batch}"
                ));
            }
        }
        points.push(BatchPoint {
            batch,
            cold_start_ms,
            repetitions,
            flags,
        });
    }
    let incomplete = points.iter().flat_map(|p| &p.repetitions).any(|r| r.errors > 0);
    let model_version = model.version().to_string();
    Ok(MeasurementSet {
        schema_version: SCHEMA_VERSION,
        fingerprint: scenario.fingerprint(&model_version),
        scenario: scenario.clone(),
        model_version,
        feature_count: pool.cols(),
        points,
        incomplete,
    })
}

fn drive(
    svc: &InferenceService,
    scenario: &Scenario,
    batch: usize,
    requests: Vec<InferenceRequest>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Outcome>> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    match scenario.arrival {
        Arrival::ClosedLoop { clients } => Ok(closed_loop(svc, requests, clients_for(clients, batch))),
        Arrival::Poisson { rate } => {
            let gaps = Exp::new(rate).map_err(|e| BenchError::Config(e.to_string()))?;
            let offsets: Vec<f64> = requests
                .iter()
                .scan(0.0, |t, _| {
                    *t += gaps.sample(rng);
                    Some(*t)
                })
                .collect();
            Ok(open_loop(svc, requests, &offsets))
        }
    }
}

fn resolve(ticket: std::result::Result<Ticket, bdaas_serving::ServeError>) -> Outcome {
    match ticket {
        Ok(t) => Outcome {
            response: t.wait().map_err(|e| e.to_string()),
            backpressure: false,
        },
        Err(e) => Outcome {
            backpressure: matches!(e, bdaas_serving::ServeError::Backpressure),
            response: Err(e.to_string()),
        },
    }
}

/// Keeps up to `clients` requests outstanding. Each driver thread refills its
/// share of the window once that share has been answered.
fn closed_loop(svc: &InferenceService, requests: Vec<InferenceRequest>, clients: usize) -> Vec<Outcome> {
    let drivers = clients.clamp(1, MAX_DRIVERS);
    let window = clients.div_ceil(drivers).max(1);
    let mut shares: Vec<Vec<InferenceRequest>> = (0..drivers).map(|_| Vec::new()).collect();
    for (i, r) in requests.into_iter().enumerate() {
        shares[i % drivers].push(r);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = shares
            .into_iter()
            .map(|share| {
                scope.spawn(move || {
                    let mut out = Vec::with_capacity(share.len());
                    let mut inflight = VecDeque::with_capacity(window);
                    for mut req in share {
                        if inflight.len() == window {
                            // Replies come back in submission order, so waiting on the
                            // newest ticket first costs one wake-up per window instead of
                            // one per reply, which on a shared core would preempt the
                            // worker for every row.
                            let newest = resolve(inflight.pop_back().expect("window is full"));
                            out.extend(inflight.drain(..).map(resolve));
                            out.push(newest);
                        }
                        req.received_at = Instant::now();
                        inflight.push_back(svc.submit(req));
                    }
                    out.extend(inflight.into_iter().map(resolve));
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("driver thread panicked"))
            .collect()
    })
}

/// Submits each request at its scheduled offset (seconds) regardless of
/// replies; a collector thread gathers the outcomes.
fn open_loop(svc: &InferenceService, requests: Vec<InferenceRequest>, offsets: &[f64]) -> Vec<Outcome> {
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        let collector = scope.spawn(move || rx.into_iter().map(resolve).collect::<Vec<_>>());
        let start = Instant::now();
        for (mut req, &at) in requests.into_iter().zip(offsets) {
            let due = start + Duration::from_secs_f64(at);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
            req.received_at = Instant::now();
            let _ = tx.send(svc.submit(req));
        }
        drop(tx);
        collector.join().expect("collector thread panicked")
    })
}

fn summarize(index: usize, outcomes: Vec<Outcome>, wall_s: f64) -> Repetition {
    let requests = outcomes.len();
    let backpressure = outcomes.iter().filter(|o| o.backpressure).count();
    let ok: Vec<InferenceResponse> = outcomes.into_iter().filter_map(|o| o.response.ok()).collect();
    let stage = |f: fn(&InferenceResponse) -> f64| -> f64 {
        if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(f).sum::<f64>() / ok.len() as f64
        }
    };
    let mut components: BTreeMap<String, f64> = BTreeMap::new();
    for r in &ok {
        for (k, v) in &r.security_ms {
            *components.entry(k.clone()).or_insert(0.0) += v;
        }
    }
    for v in components.values_mut() {
        *v /= ok.len() as f64;
    }
    let totals: Vec<f64> = ok.iter().map(|r| r.latency_ms.total).collect();
    Repetition {
        index,
        requests,
        completed: ok.len(),
        errors: requests - ok.len(),
        backpressure,
        wall_s,
        throughput: if wall_s > 0.0 { ok.len() as f64 / wall_s } else { 0.0 },
        latency: PercentileSnapshot::from_samples(&totals),
        queue_ms: stage(|r| r.latency_ms.queue),
        security_ms: stage(|r| r.latency_ms.security),
        compute_ms: stage(|r| r.latency_ms.compute),
        security_components: components,
        mean_batch: stage(|r| r.batch_size as f64),
    }
}
