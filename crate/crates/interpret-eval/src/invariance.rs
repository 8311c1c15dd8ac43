//! Explanations must not depend on load: the same input scored alone, in a
//! large batch, or among concurrent clients yields bitwise-identical masks.

use std::sync::Arc;
use std::time::Duration;

use bdaas_security::{ChainBuilder, SecurityChainConfig, SystemClock};
use bdaas_serving::{
    BatcherConfig, InferenceRequest, InferenceResponse, InferenceService, LifecycleConfig, Predictor, ServiceConfig,
};
use serde::Serialize;
use tabnet_core::{Explanation, FeatureMatrix};

use crate::error::{EvalError, Result};

/// How requests reach the service during one pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LoadMode {
    /// Concurrent client threads; rows are dealt round-robin.
    pub clients: usize,
    pub max_batch: usize,
}

impl LoadMode {
    pub const SINGLE: LoadMode = LoadMode { clients: 1, max_batch: 1 };
}

/// Explanations gathered under one load mode, in sample order.
#[derive(Debug, Clone)]
pub struct LoadedPass {
    pub mode: LoadMode,
    pub explanations: Vec<Explanation>,
    pub probabilities: Vec<Vec<f64>>,
    /// Largest batch any sample was scored in.
    pub max_observed_batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Difference {
    pub sample: usize,
    /// `None` for the aggregate importance vector, else the decision step.
    pub step: Option<usize>,
    pub feature: usize,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum InvarianceOutcome {
    Pass { samples: usize },
    Fail { first: Difference, differing_samples: usize },
}

impl InvarianceOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, InvarianceOutcome::Pass { .. })
    }
}

/// Bitwise comparison of two explanation sets.
pub fn compare_explanations(left: &[Explanation], right: &[Explanation]) -> Result<InvarianceOutcome> {
    if left.len() != right.len() {
        return Err(EvalError::Input(format!("{} vs {} explanations", left.len(), right.len())));
    }
    let mut first = None;
    let mut differing = 0;
    for (i, (a, b)) in left.iter().zip(right).enumerate() {
        let d = first_difference(i, a, b);
        if let Some(d) = d {
            differing += 1;
            first.get_or_insert(d);
        }
    }
    Ok(match first {
        None => InvarianceOutcome::Pass { samples: left.len() },
        Some(first) => InvarianceOutcome::Fail {
            first,
            differing_samples: differing,
        },
    })
}

fn first_difference(sample: usize, a: &Explanation, b: &Explanation) -> Option<Difference> {
    let vectors = a
        .step_masks
        .iter()
        .zip(&b.step_masks)
        .enumerate()
        .map(|(s, (x, y))| (Some(s), x, y))
        .chain(std::iter::once((None, &a.aggregate_importance, &b.aggregate_importance)));
    for (step, x, y) in vectors {
        if x.len() != y.len() {
            return Some(Difference {
                sample,
                step,
                feature: x.len().min(y.len()),
                left: f64::NAN,
                right: f64::NAN,
            });
        }
        if let Some(feature) = x.iter().zip(y).position(|(p, q)| p.to_bits() != q.to_bits()) {
            return Some(Difference {
                sample,
                step,
                feature,
                left: x[feature],
                right: y[feature],
            });
        }
    }
    (a.step_masks.len() != b.step_masks.len()).then(|| Difference {
        sample,
        step: Some(a.step_masks.len().min(b.step_masks.len())),
        feature: 0,
        left: f64::NAN,
        right: f64::NAN,
    })
}

fn service_for(predictor: Arc<dyn Predictor>, mode: LoadMode) -> Result<InferenceService> {
    let chain = ChainBuilder::new(SecurityChainConfig::baseline(), Arc::new(SystemClock::default()))
        .build()
        .map_err(|e| EvalError::Serving(e.to_string()))?;
    let config = ServiceConfig {
        batcher: BatcherConfig {
            max_batch: mode.max_batch,
            // long enough for a burst from one client to land in one batch
            max_delay: Duration::from_millis(20),
            queue_capacity: 65_536,
        },
        lifecycle: LifecycleConfig {
            load_delay: Duration::ZERO,
            idle_timeout: None,
            wedge_after: Duration::from_secs(60),
        },
        parallelism: mode.clients.clamp(1, 8),
        keep_warm_interval: None,
        latency_window: 4096,
    };
    let loader: bdaas_serving::ModelLoader = Arc::new(move || Ok(predictor.clone()));
    let svc = InferenceService::start(config, loader, Arc::new(chain)).map_err(|e| EvalError::Serving(e.to_string()))?;
    svc.warm_up().map_err(EvalError::Serving)?;
    Ok(svc)
}

/// Scores every sample through a fresh service under `mode`. Each client
/// submits its share in one burst, then waits for the replies.
pub fn explain_under_load(predictor: Arc<dyn Predictor>, samples: &FeatureMatrix, mode: LoadMode) -> Result<LoadedPass> {
    if mode.clients == 0 || mode.max_batch == 0 {
        return Err(EvalError::Input("clients and max_batch must be at least 1".into()));
    }
    let svc = service_for(predictor, mode)?;
    let n = samples.rows();
    let mut slots: Vec<Option<InferenceResponse>> = vec![None; n];
    let results: Vec<Result<Vec<(usize, InferenceResponse)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..mode.clients)
            .map(|c| {
                let svc = &svc;
                scope.spawn(move || {
                    let rows: Vec<usize> = (c..n).step_by(mode.clients).collect();
                    let mut tickets = Vec::with_capacity(rows.len());
                    for &r in &rows {
                        let req = InferenceRequest::new(r.to_string(), samples.row(r).to_vec());
                        tickets.push((r, svc.submit(req).map_err(|e| EvalError::Serving(e.to_string()))?));
                    }
                    tickets
                        .into_iter()
                        .map(|(r, t)| t.wait().map(|resp| (r, resp)).map_err(|e| EvalError::Serving(e.to_string())))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(EvalError::Serving("client thread panicked".into()))))
            .collect()
    });
    for part in results {
        for (r, resp) in part? {
            if resp.id != r.to_string() {
                return Err(EvalError::Serving(format!("response id {} for sample {r}", resp.id)));
            }
            slots[r] = Some(resp);
        }
    }
    svc.shutdown();
    let responses: Vec<InferenceResponse> = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| EvalError::Serving(format!("no response for sample {i}"))))
        .collect::<Result<_>>()?;
    Ok(LoadedPass {
        mode,
        max_observed_batch: responses.iter().map(|r| r.batch_size).max().unwrap_or(0),
        probabilities: responses.iter().map(|r| r.probabilities.clone()).collect(),
        explanations: responses
            .into_iter()
            .map(|r| Explanation {
                step_masks: r.masks,
                aggregate_importance: r.importance,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceComparison {
    pub left: LoadMode,
    pub right: LoadMode,
    pub left_max_batch_observed: usize,
    pub right_max_batch_observed: usize,
    pub outcome: InvarianceOutcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceReport {
    pub samples: usize,
    pub comparisons: Vec<InvarianceComparison>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.comparisons.iter().all(|c| c.outcome.passed())
    }
}

/// Runs the samples through the service in several load modes and compares
/// explanations bitwise: one client vs many clients at the same batch limit,
/// and batch limit 1 vs a large batch limit with one client.
pub fn load_invariance_check(
    predictor: Arc<dyn Predictor>,
    samples: &FeatureMatrix,
    peak_clients: usize,
    peak_batch: usize,
) -> Result<InvarianceReport> {
    let single = explain_under_load(predictor.clone(), samples, LoadMode::SINGLE)?;
    let burst = explain_under_load(
        predictor.clone(),
        samples,
        LoadMode {
            clients: 1,
            max_batch: peak_batch,
        },
    )?;
    let concurrent = explain_under_load(
        predictor,
        samples,
        LoadMode {
            clients: peak_clients,
            max_batch: peak_batch,
        },
    )?;
    let compare = |a: &LoadedPass, b: &LoadedPass| -> Result<InvarianceComparison> {
        Ok(InvarianceComparison {
            left: a.mode,
            right: b.mode,
            left_max_batch_observed: a.max_observed_batch,
            right_max_batch_observed: b.max_observed_batch,
            outcome: compare_explanations(&a.explanations, &b.explanations)?,
        })
    };
    Ok(InvarianceReport {
        samples: samples.rows(),
        comparisons: vec![compare(&burst, &concurrent)?, compare(&single, &burst)?],
    })
}
