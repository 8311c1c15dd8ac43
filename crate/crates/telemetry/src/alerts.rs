use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TelemetryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRule {
    pub name: String,
    pub metric: String,
    pub comparator: Comparator,
    pub threshold: f64,
    /// Seconds the condition must hold before firing, and must be absent
    /// before clearing.
    pub sustain_s: f64,
}

/// Metric names the alert engine knows how to read.
pub const KNOWN_METRICS: &[&str] = &[
    "latency_p50_ms",
    "latency_p95_ms",
    "latency_p99_ms",
    "gpu_utilization",
    "queue_depth",
    "error_rate",
    "throughput_samples_per_second",
    "audit_buffer_depth",
];

impl AlertRule {
    /// p99 latency above 50 ms for 5 s.
    pub fn p99_latency() -> Self {
        Self {
            name: "p99_latency_high".into(),
            metric: "latency_p99_ms".into(),
            comparator: Comparator::Gt,
            threshold: 50.0,
            sustain_s: 5.0,
        }
    }

    /// Synthetic accelerator utilization above 80% for 5 s.
    pub fn gpu_utilization() -> Self {
        Self {
            name: "gpu_utilization_high".into(),
            metric: "gpu_utilization".into(),
            comparator: Comparator::Gt,
            threshold: 80.0,
            sustain_s: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Fired,
    Cleared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertTransition {
    pub rule: String,
    pub metric: String,
    pub kind: TransitionKind,
    pub at_s: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Default)]
struct RuleState {
    fired: bool,
    /// Start of the current run of evaluations in the opposite condition.
    since: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AlertEngine {
    rules: Vec<AlertRule>,
    state: Vec<RuleState>,
}

#[derive(Deserialize)]
struct RuleFile {
    rules: Vec<AlertRule>,
}

impl AlertEngine {
    /// Validates every rule against `known_metrics`; unknown names fail here
    /// rather than at evaluation.
    pub fn new(rules: Vec<AlertRule>, known_metrics: &[&str]) -> Result<Self> {
        let known: HashSet<&str> = known_metrics.iter().copied().collect();
        let mut names = HashSet::new();
        for r in &rules {
            if !known.contains(r.metric.as_str()) {
                return Err(TelemetryError::UnknownMetric {
                    rule: r.name.clone(),
                    metric: r.metric.clone(),
                });
            }
            if !r.threshold.is_finite() || !(r.sustain_s >= 0.0) {
                return Err(TelemetryError::InvalidRule {
                    rule: r.name.clone(),
                    reason: "threshold must be finite and sustain non-negative".into(),
                });
            }
            if !names.insert(r.name.as_str()) {
                return Err(TelemetryError::InvalidRule {
                    rule: r.name.clone(),
                    reason: "duplicate rule name".into(),
                });
            }
        }
        let state = vec![RuleState::default(); rules.len()];
        Ok(Self { rules, state })
    }

    /// Parses `{"rules": [...]}`.
    pub fn from_json(text: &str, known_metrics: &[&str]) -> Result<Self> {
        let file: RuleFile = serde_json::from_str(text)?;
        Self::new(file.rules, known_metrics)
    }

    pub fn default_rules() -> Self {
        Self::new(vec![AlertRule::p99_latency(), AlertRule::gpu_utilization()], KNOWN_METRICS)
            .expect("built-in rules are valid")
    }

    pub fn rules(&self) -> &[AlertRule] {
        &self.rules
    }

    pub fn is_fired(&self, rule: &str) -> bool {
        self.rules
            .iter()
            .zip(&self.state)
            .any(|(r, s)| r.name == rule && s.fired)
    }

    /// Evaluates all rules at time `now_s`. A rule whose metric is absent
    /// from `metrics` keeps its state.
    pub fn evaluate(&mut self, now_s: f64, metrics: &BTreeMap<String, f64>) -> Vec<AlertTransition> {
        let mut out = Vec::new();
        for (rule, st) in self.rules.iter().zip(self.state.iter_mut()) {
            let Some(&value) = metrics.get(&rule.metric) else {
                continue;
            };
            let breaching = rule.comparator.holds(value, rule.threshold);
            // While not fired we track how long the breach has lasted; while
            // fired we track how long it has been absent.
            if breaching != st.fired {
                let since = *st.since.get_or_insert(now_s);
                if now_s - since >= rule.sustain_s {
                    st.fired = !st.fired;
                    st.since = None;
                    out.push(AlertTransition {
                        rule: rule.name.clone(),
                        metric: rule.metric.clone(),
                        kind: if st.fired {
                            TransitionKind::Fired
                        } else {
                            TransitionKind::Cleared
                        },
                        at_s: now_s,
                        value,
                    });
                }
            } else {
                st.since = None;
            }
        }
        out
    }
}

/// Writes transitions as JSON lines.
pub fn write_events<W: Write>(mut w: W, events: &[AlertTransition]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
