use std::collections::BTreeMap;
use std::fmt::Write as _;

use parking_lot::Mutex;

use crate::error::{Result, TelemetryError};
use crate::latency::LatencyRecorder;

pub const REQUESTS_TOTAL: &str = "inference_requests_total";
pub const ERRORS_TOTAL: &str = "inference_errors_total";
pub const QUEUE_DEPTH: &str = "queue_depth";
pub const AUDIT_BUFFER_DEPTH: &str = "audit_buffer_depth";
pub const THROUGHPUT: &str = "throughput_samples_per_second";
pub const GPU_UTILIZATION: &str = "gpu_utilization";
pub const LATENCY: &str = "inference_latency_ms";
pub const INSTRUMENTATION_ERRORS: &str = "instrumentation_errors_total";

/// `[a-zA-Z_:][a-zA-Z0-9_:]*`
pub fn valid_metric_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' || c == ':' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ':')
}

fn valid_label_name(name: &str) -> bool {
    valid_metric_name(name) && !name.contains(':')
}

fn escape_label(v: &str) -> String {
    v.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

type Labels = Vec<(String, String)>;

fn labels_of(labels: &[(&str, &str)]) -> Result<Labels> {
    let mut out: Labels = Vec::with_capacity(labels.len());
    for (k, v) in labels {
        if !valid_label_name(k) {
            return Err(TelemetryError::InvalidMetricName((*k).to_string()));
        }
        out.push(((*k).to_string(), (*v).to_string()));
    }
    out.sort();
    Ok(out)
}

fn render_labels(labels: &Labels) -> String {
    if labels.is_empty() {
        return String::new();
    }
    let inner: Vec<String> = labels
        .iter()
        .map(|(k, v)| format!("{k}=\"{}\"", escape_label(v)))
        .collect();
    format!("{{{}}}", inner.join(","))
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "+Inf" } else { "-Inf" }.into()
    } else {
        format!("{v}")
    }
}

/// Counters and gauges rendered in the Prometheus text format.
#[derive(Debug, Default)]
pub struct MetricsRegistry {
    counters: Mutex<BTreeMap<String, BTreeMap<Labels, u64>>>,
    gauges: Mutex<BTreeMap<String, BTreeMap<Labels, f64>>>,
}

impl MetricsRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn inc_counter(&self, name: &str, labels: &[(&str, &str)], by: u64) -> Result<()> {
        if !valid_metric_name(name) {
            return Err(TelemetryError::InvalidMetricName(name.into()));
        }
        let labels = labels_of(labels)?;
        *self
            .counters
            .lock()
            .entry(name.into())
            .or_default()
            .entry(labels)
            .or_default() += by;
        Ok(())
    }

    pub fn set_gauge(&self, name: &str, labels: &[(&str, &str)], value: f64) -> Result<()> {
        if !valid_metric_name(name) {
            return Err(TelemetryError::InvalidMetricName(name.into()));
        }
        let labels = labels_of(labels)?;
        self.gauges.lock().entry(name.into()).or_default().insert(labels, value);
        Ok(())
    }

    pub fn counter(&self, name: &str, labels: &[(&str, &str)]) -> u64 {
        let Ok(labels) = labels_of(labels) else { return 0 };
        self.counters
            .lock()
            .get(name)
            .and_then(|m| m.get(&labels))
            .copied()
            .unwrap_or(0)
    }

    /// Sum of a counter over all label sets.
    pub fn counter_total(&self, name: &str) -> u64 {
        self.counters.lock().get(name).map_or(0, |m| m.values().sum())
    }

    pub fn gauge(&self, name: &str, labels: &[(&str, &str)]) -> Option<f64> {
        let labels = labels_of(labels).ok()?;
        self.gauges.lock().get(name).and_then(|m| m.get(&labels)).copied()
    }

    /// Renders every counter and gauge, plus per-stage latency summaries
    /// from `latency` when given.
    pub fn render(&self, latency: Option<&LatencyRecorder>) -> String {
        let mut out = String::new();
        for (name, series) in self.counters.lock().iter() {
            let _ = writeln!(out, "# TYPE {name} counter");
            for (labels, v) in series {
                let _ = writeln!(out, "{name}{} {v}", render_labels(labels));
            }
        }
        for (name, series) in self.gauges.lock().iter() {
            let _ = writeln!(out, "# TYPE {name} gauge");
            for (labels, v) in series {
                let _ = writeln!(out, "{name}{} {}", render_labels(labels), format_value(*v));
            }
        }
        if let Some(rec) = latency {
            let _ = writeln!(out, "# TYPE {LATENCY} summary");
            for stage in rec.stages() {
                let Some(s) = rec.snapshot(&stage) else { continue };
                let st = escape_label(&stage);
                for (q, v) in [("0.5", s.p50), ("0.95", s.p95), ("0.99", s.p99)] {
                    let _ = writeln!(out, "{LATENCY}{{quantile=\"{q}\",stage=\"{st}\"}} {}", format_value(v));
                }
                let _ = writeln!(out, "{LATENCY}_sum{{stage=\"{st}\"}} {}", format_value(s.sum));
                let _ = writeln!(out, "{LATENCY}_count{{stage=\"{st}\"}} {}", s.total_count);
            }
            let _ = writeln!(out, "# TYPE {INSTRUMENTATION_ERRORS} counter");
            let _ = writeln!(out, "{INSTRUMENTATION_ERRORS} {}", rec.rejected());
        }
        out
    }
}

/// Metric names appearing in an exposition document (sample lines only).
pub fn metric_names(text: &str) -> Vec<String> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split(['{', ' ']).next().unwrap_or_default().to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn name_rules() {
        assert!(valid_metric_name("inference_requests_total"));
        assert!(valid_metric_name("ns:metric_1"));
        assert!(!valid_metric_name("1abc"));
        assert!(!valid_metric_name("bad-name"));
        assert!(!valid_metric_name(""));
    }

    #[test]
    fn label_values_are_escaped() {
        let r = MetricsRegistry::new();
        r.inc_counter("c", &[("kind", "a\"b")], 1).unwrap();
        assert!(r.render(None).contains(r#"c{kind="a\"b"} 1"#));
    }
}
