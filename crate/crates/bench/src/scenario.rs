//! Versioned JSON configuration documents.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Arrival {
    /// Fixed number of outstanding requests; 0 picks twice the batch size.
    ClosedLoop { clients: usize },
    /// Open-loop Poisson arrivals at `rate` requests per second.
    Poisson { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub dataset: String,
    /// Model file; when absent the dataset recipe is trained first.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_batches")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_preset")]
    pub security_preset: String,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    /// Requests completed before measurement starts in each repetition.
    #[serde(default = "default_warmup")]
    pub warmup_requests: usize,
    #[serde(default = "default_requests")]
    pub requests_per_repetition: usize,
    #[serde(default = "default_arrival")]
    pub arrival: Arrival,
    /// Concurrent forward passes in the service.
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default = "default_delay")]
    pub max_delay_ms: f64,
    /// Simulated model load time; the load happens before measuring.
    #[serde(default)]
    pub cold_start_ms: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_batches() -> Vec<usize> {
    vec![100, 500, 1000]
}
fn default_preset() -> String {
    "baseline".into()
}
fn default_reps() -> usize {
    10
}
fn default_warmup() -> usize {
    200
}
fn default_requests() -> usize {
    4000
}
fn default_arrival() -> Arrival {
    Arrival::ClosedLoop { clients: 0 }
}
fn one() -> usize {
    1
}
fn default_delay() -> f64 {
    2.0
}

impl Scenario {
    pub fn new(dataset: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dataset: dataset.into(),
            model: None,
            batch_sizes: default_batches(),
            security_preset: default_preset(),
            repetitions: default_reps(),
            warmup_requests: default_warmup(),
            requests_per_repetition: default_requests(),
            arrival: default_arrival(),
            parallelism: 1,
            max_delay_ms: default_delay(),
            cold_start_ms: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_version(self.schema_version)?;
        let fail = |m: String| Err(BenchError::Config(m));
        if self.repetitions == 0 {
            return fail("repetitions must be at least 1".into());
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return fail("batch_sizes must be non-empty and each at least 1".into());
        }
        if self.requests_per_repetition == 0 || self.parallelism == 0 {
            return fail("requests_per_repetition and parallelism must be at least 1".into());
        }
        for (name, v) in [("max_delay_ms", self.max_delay_ms), ("cold_start_ms", self.cold_start_ms)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a non-negative number"));
            }
        }
        if let Arrival::Poisson { rate } = self.arrival {
            if !(rate > 0.0 && rate.is_finite()) {
                return fail("poisson rate must be positive".into());
            }
        }
        if bdaas_security::SecurityChainConfig::parse(&self.security_preset).is_err() {
            return fail(format!("unknown security preset {:?}", self.security_preset));
        }
        Ok(())
    }

    /// Short hash of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).unwrap_or_default();
        hex::encode(&Sha256::digest(&canonical)[..8])
    }

    /// Identifies a benchmark run: configuration hash, model and seed.
    pub fn fingerprint(&self, model_version: &str) -> String {
        format!("config={} model={} seed={}", self.config_hash(), model_version, self.seed)
    }
}

/// Settings for `bench serve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    pub schema_version: u32,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    /// Model file; when absent the dataset recipe is trained at startup.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_preset")]
    pub security_preset: String,
    /// Required when the preset audits.
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
    #[serde(default = "default_serve_batch")]
    pub max_batch: usize,
    #[serde(default = "default_delay")]
    pub max_delay_ms: f64,
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub cold_start_ms: f64,
    /// Scale to zero after this long without traffic.
    #[serde(default)]
    pub idle_timeout_s: Option<f64>,
    /// Ping the model this often to keep it loaded.
    #[serde(default)]
    pub keep_warm_s: Option<f64>,
}

fn default_dataset() -> String {
    "hr".into()
}
fn default_listen() -> String {
    "127.0.0.1:8080".into()
}
fn default_serve_batch() -> usize {
    256
}
fn default_queue() -> usize {
    4096
}

impl ServeConfig {
    pub fn validate(&self) -> Result<()> {
        check_version(self.schema_version)?;
        let fail = |m: String| Err(BenchError::Config(m));
        if self.max_batch == 0 || self.queue_capacity == 0 || self.parallelism == 0 {
            return fail("max_batch, queue_capacity and parallelism must be at least 1".into());
        }
        let durations = [Some(self.max_delay_ms), Some(self.cold_start_ms), self.idle_timeout_s, self.keep_warm_s];
        if durations.iter().flatten().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return fail("durations must be non-negative numbers".into());
        }
        let chain = bdaas_security::SecurityChainConfig::parse(&self.security_preset)
            .map_err(|_| BenchError::Config(format!("unknown security preset {:?}", self.security_preset)))?;
        if chain.has(bdaas_security::Component::Audit) && self.audit_log.is_none() {
            return fail("audit_log is required when the preset audits".into());
        }
        Ok(())
    }
}

/// Pricing document: a versioned wrapper around the cost model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub pricing: bdaas_econ::PricingConfig,
}

pub fn read_pricing(path: &Path) -> Result<bdaas_econ::PricingConfig> {
    let doc: PricingDocument = read_json(path)?;
    check_version(doc.schema_version)?;
    for m in &doc.pricing.configurations {
        m.validate()?;
    }
    Ok(doc.pricing)
}

pub fn check_version(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(BenchError::Config(format!(
            "unsupported schema_version {v}, expected {SCHEMA_VERSION}"
        )));
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let s: Scenario = serde_json::from_str(r#"{"schema_version":1,"dataset":"hr"}"#).unwrap();
        assert_eq!(s.batch_sizes, vec![100, 500, 1000]);
        assert_eq!(s.repetitions, 10);
        s.validate().unwrap();
    }

    #[test]
    fn rejects_bad_documents() {
        let mut s = Scenario::new("hr");
        s.repetitions = 0;
        assert!(s.validate().is_err());
        let mut s = Scenario::new("hr");
        s.schema_version = 2;
        assert!(s.validate().is_err());
        let mut s = Scenario::new("hr");
        s.security_preset = "fort_knox".into();
        assert!(s.validate().is_err());
        assert!(serde_json::from_str::<Scenario>(r#"{"schema_version":1,"dataset":"hr","bogus":1}"#).is_err());
    }

    #[test]
    fn serve_config_requires_audit_path_for_auditing_presets() {
        let c: ServeConfig = serde_json::from_str(r#"{"schema_version":1,"security_preset":"full_il4"}"#).unwrap();
        assert!(c.validate().is_err());
        let c: ServeConfig =
            serde_json::from_str(r#"{"schema_version":1,"security_preset":"full_il4","audit_log":"a.log"}"#).unwrap();
        c.validate().unwrap();
        assert_eq!(c.max_batch, 256);
    }

    #[test]
    fn fingerprint_tracks_config_model_and_seed() {
        let a = Scenario::new("hr");
        let mut b = a.clone();
        b.seed = 9;
        assert_ne!(a.fingerprint("m1"), b.fingerprint("m1"));
        assert_ne!(a.fingerprint("m1"), a.fingerprint("m2"));
        assert_eq!(a.fingerprint("m1"), a.clone().fingerprint("m1"));
    }
}
