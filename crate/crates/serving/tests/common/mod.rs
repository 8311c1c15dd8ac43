#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use bdaas_security::{SecurityChain, SecurityChainConfig, SecurityFixture, SystemClock};
use bdaas_serving::{
    BatcherConfig, InferenceService, LifecycleConfig, ModelLoader, Predictor, ServiceConfig,
};
use tabnet_core::{FeatureMatrix, ModelConfig, PredictionOutput, TrainedModel};

pub const WIDTH: usize = 6;

pub fn model() -> TrainedModel {
    TrainedModel::initialize(ModelConfig::new(WIDTH, 2).with_seed(7)).unwrap()
}

pub fn row(i: usize) -> Vec<f64> {
    (0..WIDTH).map(|j| ((i * 31 + j * 7) % 17) as f64 / 8.0 - 1.0).collect()
}

/// Wraps a model, counting rows scored and failing the first `fail_first`
/// forward passes.
pub struct Instrumented {
    pub inner: TrainedModel,
    pub rows_seen: AtomicU64,
    pub calls: AtomicU64,
    pub fail_first: u64,
}

impl Instrumented {
    pub fn new(fail_first: u64) -> Arc<Self> {
        Arc::new(Self {
            inner: model(),
            rows_seen: AtomicU64::new(0),
            calls: AtomicU64::new(0),
            fail_first,
        })
    }
}

impl Predictor for Instrumented {
    fn version(&self) -> &str {
        self.inner.model_version()
    }

    fn feature_count(&self) -> usize {
        WIDTH
    }

    fn predict(&self, batch: &FeatureMatrix) -> Result<Vec<PredictionOutput>, String> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.rows_seen.fetch_add(batch.rows() as u64, Ordering::SeqCst);
        if n < self.fail_first {
            return Err("simulated device fault".into());
        }
        self.inner.forward(batch).map_err(|e| e.to_string())
    }
}

pub fn loader_for(p: Arc<dyn Predictor>) -> ModelLoader {
    Arc::new(move || Ok(p.clone()))
}

pub fn fixture() -> SecurityFixture {
    SecurityFixture::generate(Arc::new(SystemClock::default()), Duration::ZERO).unwrap()
}

pub fn chain(fx: &SecurityFixture, preset: &str, audit: Option<&Path>) -> Arc<SecurityChain> {
    Arc::new(fx.chain(SecurityChainConfig::parse(preset).unwrap(), WIDTH, audit).unwrap())
}

pub fn fast_config(max_batch: usize) -> ServiceConfig {
    ServiceConfig {
        batcher: BatcherConfig {
            max_batch,
            max_delay: Duration::from_millis(2),
            queue_capacity: 8192,
        },
        lifecycle: LifecycleConfig {
            load_delay: Duration::ZERO,
            idle_timeout: None,
            wedge_after: Duration::from_secs(60),
        },
        parallelism: 2,
        keep_warm_interval: None,
        latency_window: 65_536,
    }
}

pub fn start(config: ServiceConfig, predictor: Arc<dyn Predictor>, chain: Arc<SecurityChain>) -> InferenceService {
    InferenceService::start(config, loader_for(predictor), chain).unwrap()
}
