//! Report tables and plot CSVs.
//!
//! Output is a pure function of the persisted measurements and the pricing
//! document: the same inputs always produce byte-identical files. Every file
//! starts with the fingerprints of the measurement sets it summarizes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use bdaas_econ::cost::{aligned_table, cost_report};
use bdaas_econ::reference::{tradeoff_models, TRADEOFF_POINTS};
use bdaas_econ::security_latency::security_table_text;
use bdaas_econ::{
    amortized_security_latency, break_even_batch, cost_per_1k, recommend_table, security_overhead_table,
    ComponentLatencies, HandshakeMode, PricingConfig, Thresholds,
};
use interpret_eval::StabilityReport;

use crate::error::{BenchError, Result};
use crate::load::{BatchPoint, MeasurementSet};
use crate::secbench::{CompositionReport, COMPOSITION_SLACK};
use crate::stats::{mean, t_interval};

/// Pricing entry used to cost locally measured throughput.
pub const LOCAL_PRICING: &str = "local";

/// Label for rows taken from the pricing document's published curves.
pub const REPORTED: &str = "reported";
pub const MEASURED: &str = "measured";

pub const COMPOSITION_FILE: &str = "composition.json";
pub const STABILITY_FILE: &str = "stability.json";

/// Optional inputs found next to the measurements.
#[derive(Debug, Clone, Default)]
pub struct Extras {
    pub composition: Option<CompositionReport>,
    pub stability: Option<StabilityReport>,
}

impl Extras {
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Option<String>> {
            let p = dir.join(name);
            if p.exists() {
                Ok(Some(std::fs::read_to_string(p)?))
            } else {
                Ok(None)
            }
        };
        Ok(Self {
            composition: read(COMPOSITION_FILE)?.map(|t| serde_json::from_str(&t)).transpose()?,
            stability: read(STABILITY_FILE)?.map(|t| serde_json::from_str(&t)).transpose()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFile {
    pub name: String,
    pub contents: String,
}

/// One measured (dataset, config, batch) point, flattened for reporting.
struct Row<'a> {
    dataset: &'a str,
    config: &'a str,
    fingerprint: &'a str,
    point: &'a BatchPoint,
}

fn rows(sets: &[MeasurementSet]) -> Vec<Row<'_>> {
    let mut out: Vec<Row<'_>> = sets
        .iter()
        .flat_map(|s| {
            s.points.iter().map(move |p| Row {
                dataset: &s.scenario.dataset,
                config: &s.scenario.security_preset,
                fingerprint: &s.fingerprint,
                point: p,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        (a.dataset, a.config, a.point.batch, a.fingerprint).cmp(&(b.dataset, b.config, b.point.batch, b.fingerprint))
    });
    out
}

fn header(sets: &[MeasurementSet], title: &str) -> String {
    let mut fps: Vec<&str> = sets.iter().map(|s| s.fingerprint.as_str()).collect();
    fps.sort_unstable();
    fps.dedup();
    let mut h = format!("# {title}\n");
    for fp in fps {
        let _ = writeln!(h, "# fingerprint: {fp}");
    }
    h
}

fn ci_text(samples: &[f64]) -> String {
    match t_interval(samples) {
        Some(ci) => format!("±{:.1}%", ci.pct_of_mean),
        None => "n/a".into(),
    }
}

fn mean_latency(p: &BatchPoint) -> (f64, f64, f64) {
    let snaps: Vec<_> = p.repetitions.iter().filter_map(|r| r.latency).collect();
    if snaps.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let m = |f: fn(&bdaas_telemetry::PercentileSnapshot) -> f64| mean(&snaps.iter().map(f).collect::<Vec<_>>());
    (m(|s| s.p50), m(|s| s.p95), m(|s| s.p99))
}

fn local_cost(pricing: &PricingConfig, throughput: f64) -> Result<Option<f64>> {
    match pricing.get(LOCAL_PRICING) {
        Some(m) if throughput > 0.0 => Ok(Some(cost_per_1k(m.price_per_hour, m.nodes, throughput)?)),
        _ => Ok(None),
    }
}

fn throughput_table(sets: &[MeasurementSet], pricing: &PricingConfig) -> Result<(String, String)> {
    let mut table = header(sets, "Throughput, latency and cost per 1K samples");
    let mut csv = header(sets, "throughput and cost by (dataset, config, batch)");
    csv.push_str("dataset,config,batch,source,throughput,throughput_ci_pct,p50_ms,p95_ms,p99_ms,cost_per_1k\n");
    let mut body = Vec::new();
    let mut notes = Vec::new();
    for r in rows(sets) {
        let tp = r.point.throughputs();
        let m = mean(&tp);
        let (p50, p95, p99) = mean_latency(r.point);
        let cost = local_cost(pricing, m)?;
        body.push(vec![
            r.dataset.to_string(),
            r.config.to_string(),
            r.point.batch.to_string(),
            MEASURED.into(),
            format!("{m:.1}"),
            ci_text(&tp),
            format!("{p50:.3}"),
            format!("{p95:.3}"),
            format!("{p99:.3}"),
            cost.map_or("n/a".into(), |c| format!("{c:.4}")),
        ]);
        let ci = t_interval(&tp).map_or(String::new(), |c| format!("{:.3}", c.pct_of_mean));
        let _ = writeln!(
            csv,
            "{},{},{},{MEASURED},{m:.3},{ci},{p50:.4},{p95:.4},{p99:.4},{}",
            r.dataset,
            r.config,
            r.point.batch,
            cost.map_or(String::new(), |c| format!("{c:.8}"))
        );
        if tp.len() < 2 {
            notes.push(format!(
                "{} {} batch {}: CI omitted, fewer than 2 repetitions",
                r.dataset, r.config, r.point.batch
            ));
        }
        for f in &r.point.flags {
            notes.push(format!("{} {} batch {}: {f}", r.dataset, r.config, r.point.batch));
        }
    }
    for c in cost_report(pricing)? {
        if c.configuration == LOCAL_PRICING {
            continue;
        }
        body.push(vec![
            "reference".into(),
            c.configuration.clone(),
            c.batch.to_string(),
            REPORTED.into(),
            format!("{:.1}", c.throughput),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            format!("{:.4}", c.cost_per_1k),
        ]);
        let _ = writeln!(
            csv,
            "reference,{},{},{REPORTED},{:.3},,,,,{:.8}",
            c.configuration, c.batch, c.throughput, c.cost_per_1k
        );
    }
    table.push_str(&aligned_table(
        &["dataset", "config", "batch", "source", "samples_per_s", "ci95", "p50_ms", "p95_ms", "p99_ms", "usd_per_1k"],
        &body,
    ));
    if pricing.get(LOCAL_PRICING).is_none() {
        notes.push(format!("no \"{LOCAL_PRICING}\" pricing entry: measured rows are not costed"));
    }
    for s in sets.iter().filter(|s| s.incomplete) {
        notes.push(format!("{}: run incomplete, some requests failed", s.fingerprint));
    }
    if !notes.is_empty() {
        table.push_str("\nnotes:\n");
        for n in notes {
            let _ = writeln!(table, "- {n}");
        }
    }
    Ok((table, csv))
}

fn latency_csv(sets: &[MeasurementSet]) -> String {
    let mut csv = header(sets, "per-repetition latency percentiles by (dataset, config, batch)");
    csv.push_str("dataset,config,batch,repetition,throughput,p50_ms,p95_ms,p99_ms,queue_ms,security_ms,compute_ms\n");
    for r in rows(sets) {
        for rep in &r.point.repetitions {
            let (p50, p95, p99) = rep
                .latency
                .map_or((String::new(), String::new(), String::new()), |s| {
                    (format!("{:.4}", s.p50), format!("{:.4}", s.p95), format!("{:.4}", s.p99))
                });
            let _ = writeln!(
                csv,
                "{},{},{},{},{:.3},{p50},{p95},{p99},{:.4},{:.4},{:.4}",
                r.dataset, r.config, r.point.batch, rep.index, rep.throughput, rep.queue_ms, rep.security_ms, rep.compute_ms
            );
        }
    }
    csv
}

fn security_report(sets: &[MeasurementSet], composition: Option<&CompositionReport>) -> Result<String> {
    let mut out = header(sets, "Security overhead");
    let reference = ComponentLatencies::reference();
    out.push_str("\nreference components, additive model (reported row taken as published):\n");
    out.push_str(&security_table_text(&security_overhead_table(&reference)?));
    let amortized = amortized_security_latency(
        &reference,
        &["mtls"],
        HandshakeMode::Amortized {
            handshakes: 1,
            requests: 20,
        },
    )?;
    let _ = writeln!(out, "mTLS amortized over 1 handshake per 20 requests: {amortized:.2} ms");

    out.push_str("\nmeasured security stage, mean ms per request:\n");
    let mut baseline: BTreeMap<(&str, usize), f64> = BTreeMap::new();
    for r in rows(sets) {
        if r.config == "baseline" {
            baseline.insert((r.dataset, r.point.batch), mean(&r.point.security_means()));
        }
    }
    let mut body = Vec::new();
    for r in rows(sets) {
        let sec = r.point.security_means();
        let m = mean(&sec);
        let delta = baseline.get(&(r.dataset, r.point.batch)).map(|b| m - b);
        let mut comps: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for rep in &r.point.repetitions {
            for (k, v) in &rep.security_components {
                comps.entry(k.as_str()).or_default().push(*v);
            }
        }
        let comps: Vec<String> = comps.iter().map(|(k, v)| format!("{k}={:.4}", mean(v))).collect();
        body.push(vec![
            r.dataset.to_string(),
            r.config.to_string(),
            r.point.batch.to_string(),
            format!("{m:.4}"),
            ci_text(&sec),
            delta.map_or("n/a".into(), |d| format!("{d:+.4}")),
            comps.join(" "),
        ]);
    }
    out.push_str(&aligned_table(
        &["dataset", "config", "batch", "security_ms", "ci95", "vs_baseline", "components_ms"],
        &body,
    ));

    if let Some(c) = composition {
        let _ = writeln!(
            out,
            "\nmeasured composition ({} interleaved rounds of {} requests, median deltas over baseline {:.4} ms):",
            c.rounds, c.requests_per_round, c.baseline_ms
        );
        let mut body: Vec<Vec<String>> = c
            .individual
            .iter()
            .chain(std::iter::once(&c.full))
            .map(|d| vec![d.config.clone(), d.components.join("+"), format!("{:.4}", d.delta_ms)])
            .collect();
        body.push(vec!["sum of individual".into(), String::new(), format!("{:.4}", c.sum_individual_ms)]);
        out.push_str(&aligned_table(&["config", "components", "delta_ms"], &body));
        let _ = writeln!(
            out,
            "full chain within [max individual, {COMPOSITION_SLACK} x sum]: {}",
            if c.within_bounds() { "yes" } else { "no" }
        );
    }
    Ok(out)
}

fn stability_report(sets: &[MeasurementSet], stability: Option<&StabilityReport>) -> String {
    let mut out = header(sets, "Feature importance stability");
    let Some(s) = stability else {
        out.push_str("no stability report in the input directory\n");
        return out;
    };
    let _ = writeln!(
        out,
        "partitions {} of {} rows ({} dropped); normalized rank variance {:.4}",
        s.partitions, s.rows_per_partition, s.rows_dropped, s.rank_variance
    );
    let _ = writeln!(out, "formula: {}", s.formula);
    let body: Vec<Vec<String>> = s
        .features
        .iter()
        .map(|f| {
            vec![
                f.feature.clone(),
                format!("{:.4}", f.importance),
                format!("{:.4}", f.stability),
                format!("{:.2}", f.mean_rank),
            ]
        })
        .collect();
    out.push_str(&aligned_table(&["feature", "importance", "stability", "mean_rank"], &body));
    out
}

fn recommendations(sets: &[MeasurementSet]) -> Result<String> {
    let mut out = header(sets, "Batch size recommendations");
    let recs = recommend_table(&TRADEOFF_POINTS, &Thresholds::default())?;
    let body: Vec<Vec<String>> = recs
        .iter()
        .map(|r| {
            vec![
                r.interval.to_string(),
                format!("{:.4}", r.gpu_cost),
                format!("{:.4}", r.cpu_cost),
                format!("{:.3}", r.ratio),
                r.advice.to_string(),
            ]
        })
        .collect();
    out.push_str(&aligned_table(&["batch", "gpu_usd_per_1k", "cpu_usd_per_1k", "ratio", "advice"], &body));
    let (gpu, cpu) = tradeoff_models();
    match break_even_batch(&gpu, &cpu)? {
        Some(b) => {
            let _ = writeln!(out, "break-even: gpu costs no more than cpu from batch {b}");
        }
        None => out.push_str("break-even: gpu never cheaper on the given grid\n"),
    }
    Ok(out)
}

/// Builds every report from `sets` and `pricing`. An empty measurement set
/// is an error.
pub fn emit_reports(sets: &[MeasurementSet], pricing: &PricingConfig, extras: &Extras) -> Result<Vec<ReportFile>> {
    if sets.is_empty() || sets.iter().all(|s| s.points.iter().all(|p| p.repetitions.is_empty())) {
        return Err(BenchError::Empty("measurement set is empty".into()));
    }
    let (throughput, throughput_csv) = throughput_table(sets, pricing)?;
    let file = |name: &str, contents: String| ReportFile {
        name: name.into(),
        contents,
    };
    let mut cost_csv = header(sets, "cost per 1K samples by (dataset, config, batch)");
    cost_csv.push_str("dataset,config,batch,source,cost_per_1k\n");
    for line in throughput_csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if !f[9].is_empty() {
            let _ = writeln!(cost_csv, "{},{},{},{},{}", f[0], f[1], f[2], f[3], f[9]);
        }
    }
    Ok(vec![
        file("throughput.txt", throughput),
        file("security.txt", security_report(sets, extras.composition.as_ref())?),
        file("stability.txt", stability_report(sets, extras.stability.as_ref())),
        file("recommendations.txt", recommendations(sets)?),
        file("throughput.csv", throughput_csv),
        file("latency.csv", latency_csv(sets)),
        file("cost.csv", cost_csv),
    ])
}

/// Writes the reports into `dir`. Nothing is written unless every report
/// was built.
pub fn write_reports(dir: &Path, files: &[ReportFile]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in files {
        std::fs::write(dir.join(&f.name), &f.contents)?;
    }
    Ok(())
}
