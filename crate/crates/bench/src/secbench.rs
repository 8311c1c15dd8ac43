//! Measured cost of each security component and of the full chain.
//!
//! Chains for every configuration are timed in interleaved rounds so that
//! drift in machine load hits all of them alike. A configuration's delta is
//! the median over rounds of its per-request mean minus the baseline's.
//! Audit records are written by a background thread; each round waits for
//! its own records to be persisted so that work is charged to the chain that
//! produced it rather than to whichever round runs next.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bdaas_security::{ChainRequest, Component, Role, SecurityChain, SecurityChainConfig, SecurityFixture, SystemClock};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Individual configurations whose union is the full preset.
pub const INDIVIDUAL: [(&str, &str); 4] = [
    ("mtls_only", "mtls_only"),
    ("jwt_only", "jwt_only"),
    ("audit", "audit"),
    ("input_validation", "input_validation"),
];
pub const FULL: &str = "full_il4";

/// Upper bound on the full chain relative to the sum of its parts.
pub const COMPOSITION_SLACK: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDelta {
    pub config: String,
    pub components: Vec<String>,
    /// Median over rounds of (config mean - baseline mean), ms per request.
    pub delta_ms: f64,
    /// Mean per-request time each component reported, ms.
    pub per_component_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub rounds: usize,
    pub requests_per_round: usize,
    pub baseline_ms: f64,
    pub individual: Vec<ChainDelta>,
    pub full: ChainDelta,
    pub max_individual_ms: f64,
    pub sum_individual_ms: f64,
}

impl CompositionReport {
    /// The full chain costs at least as much as its most expensive part and
    /// no more than the slack times the sum of the parts.
    pub fn within_bounds(&self) -> bool {
        self.full.delta_ms >= self.max_individual_ms && self.full.delta_ms <= COMPOSITION_SLACK * self.sum_individual_ms
    }
}

struct Timed {
    name: String,
    chain: SecurityChain,
    bearer: Option<String>,
    round_means: Vec<f64>,
    components: BTreeMap<String, Duration>,
    requests: u64,
}

fn run_once(t: &mut Timed, row: &[Vec<f64>], body: &[u8]) -> Result<Duration> {
    let req = ChainRequest {
        client_id: "bench",
        bearer: t.bearer.as_deref(),
        endpoint: "/infer",
        rows: Some(row),
        body,
    };
    let start = Instant::now();
    let mut timings = match t.chain.admit(&req) {
        bdaas_security::Admission::Admitted(a) => {
            let mut timings = a.timings;
            t.chain
                .record_outcome(&req, &a.principal, "ok", "bench", BTreeMap::new(), &mut timings);
            timings
        }
        bdaas_security::Admission::Rejected(r) => {
            return Err(BenchError::Run(format!("{} rejected a valid request: {}", t.name, r.reason)));
        }
    };
    let elapsed = start.elapsed();
    for (c, d) in timings.stages.drain(..) {
        *t.components.entry(c.name().to_string()).or_insert(Duration::ZERO) += d;
    }
    t.requests += 1;
    Ok(elapsed)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Times the baseline, each individual configuration and the full preset on
/// `row`, `rounds` times `requests_per_round` requests each.
pub fn measure_composition(row: &[f64], rounds: usize, requests_per_round: usize, work_dir: &Path) -> Result<CompositionReport> {
    if rounds == 0 || requests_per_round == 0 {
        return Err(BenchError::Config("rounds and requests_per_round must be at least 1".into()));
    }
    std::fs::create_dir_all(work_dir)?;
    let fixture = SecurityFixture::generate(Arc::new(SystemClock::default()), Duration::ZERO)?;
    let token = fixture.token(Role::HrAnalyst, "bench-client", 24 * 3600);
    let mut names: Vec<(&str, &str)> = vec![("baseline", "baseline")];
    names.extend(INDIVIDUAL);
    names.push((FULL, FULL));
    let mut timed = Vec::with_capacity(names.len());
    for (name, spec) in names {
        let config = SecurityChainConfig::parse(spec)?;
        let audit = work_dir.join(format!("composition-{name}.log"));
        let audit = config.has(Component::Audit).then_some(audit.as_path());
        timed.push(Timed {
            name: name.into(),
            bearer: config.has(Component::Jwt).then(|| token.clone()),
            chain: fixture.chain(config, row.len(), audit)?,
            round_means: Vec::with_capacity(rounds),
            components: BTreeMap::new(),
            requests: 0,
        });
    }
    let rows = [row.to_vec()];
    let body = serde_json::to_vec(row)?;
    // one untimed pass establishes connections and fills key caches
    for t in timed.iter_mut() {
        run_once(t, &rows, &body)?;
        t.components.clear();
        t.requests = 0;
    }
    let k = timed.len();
    for round in 0..rounds {
        for j in 0..k {
            let t = &mut timed[(round + j) % k];
            let mut total = Duration::ZERO;
            for _ in 0..requests_per_round {
                total += run_once(t, &rows, &body)?;
            }
            // the round pays for persisting its own audit records
            if let Some(log) = t.chain.audit_log() {
                let start = Instant::now();
                log.flush();
                total += start.elapsed();
            }
            t.round_means.push(total.as_secs_f64() * 1e3 / requests_per_round as f64);
        }
    }

    let baseline_rounds = timed[0].round_means.clone();
    let delta = |t: &Timed| -> ChainDelta {
        let mut d: Vec<f64> = t.round_means.iter().zip(&baseline_rounds).map(|(a, b)| a - b).collect();
        ChainDelta {
            config: t.name.clone(),
            components: t.chain.config().enabled().iter().map(|c| c.name().to_string()).collect(),
            delta_ms: median(&mut d),
            per_component_ms: t
                .components
                .iter()
                .map(|(c, d)| (c.clone(), d.as_secs_f64() * 1e3 / t.requests.max(1) as f64))
                .collect(),
        }
    };
    let individual: Vec<ChainDelta> = timed[1..k - 1].iter().map(delta).collect();
    let full = delta(&timed[k - 1]);
    let mut base = baseline_rounds.clone();
    Ok(CompositionReport {
        rounds,
        requests_per_round,
        baseline_ms: median(&mut base),
        max_individual_ms: individual.iter().map(|d| d.delta_ms).fold(f64::NEG_INFINITY, f64::max),
        sum_individual_ms: individual.iter().map(|d| d.delta_ms).sum(),
        individual,
        full,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn individual_sets_cover_the_full_preset() {
        let mut union = std::collections::BTreeSet::new();
        for (_, spec) in INDIVIDUAL {
            union.extend(SecurityChainConfig::parse(spec).unwrap().enabled().iter().copied());
        }
        assert_eq!(&union, SecurityChainConfig::parse(FULL).unwrap().enabled());
    }
}
