use serde::{Deserialize, Serialize};

use crate::error::{EconError, Result};

/// USD per 1000 inferences: `(price_per_hour × nodes / 3600) × (1000 / throughput)`.
pub fn cost_per_1k(price_per_hour: f64, nodes: u32, throughput: f64) -> Result<f64> {
    if !(throughput > 0.0) || !throughput.is_finite() {
        return Err(EconError::Domain(format!("throughput must be positive, got {throughput}")));
    }
    if !(price_per_hour >= 0.0) || !price_per_hour.is_finite() {
        return Err(EconError::Domain(format!("price must be non-negative, got {price_per_hour}")));
    }
    Ok((price_per_hour * f64::from(nodes) / 3600.0) * (1000.0 / throughput))
}

/// Rounds to `places` decimal places, half away from zero.
pub fn round_to(v: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    (v * f).round() / f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub batch: u32,
    /// Samples per second.
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingModel {
    pub name: String,
    pub price_per_hour: f64,
    #[serde(default = "one")]
    pub nodes: u32,
    pub curve: Vec<CurvePoint>,
}

fn one() -> u32 {
    1
}

impl PricingModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.price_per_hour >= 0.0) {
            return Err(EconError::Config(format!("{}: negative price", self.name)));
        }
        if self.nodes == 0 {
            return Err(EconError::Config(format!("{}: node count must be at least 1", self.name)));
        }
        if let Some(p) = self.curve.iter().find(|p| !(p.throughput > 0.0)) {
            return Err(EconError::Config(format!(
                "{}: throughput at batch {} must be positive",
                self.name, p.batch
            )));
        }
        let mut batches: Vec<u32> = self.curve.iter().map(|p| p.batch).collect();
        batches.sort_unstable();
        if batches.windows(2).any(|w| w[0] == w[1]) {
            return Err(EconError::Config(format!("{}: duplicate batch sizes in curve", self.name)));
        }
        Ok(())
    }

    pub fn effective_hourly_price(&self) -> f64 {
        self.price_per_hour * f64::from(self.nodes)
    }

    pub fn throughput_at(&self, batch: u32) -> Option<f64> {
        self.curve.iter().find(|p| p.batch == batch).map(|p| p.throughput)
    }

    pub fn cost_at(&self, batch: u32) -> Option<Result<f64>> {
        self.throughput_at(batch)
            .map(|t| cost_per_1k(self.price_per_hour, self.nodes, t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingConfig {
    pub configurations: Vec<PricingModel>,
}

impl PricingConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        for m in &cfg.configurations {
            m.validate()?;
        }
        Ok(cfg)
    }

    pub fn get(&self, name: &str) -> Option<&PricingModel> {
        self.configurations.iter().find(|m| m.name == name)
    }
}

/// One (configuration, batch) cost line with the inputs needed to recompute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub configuration: String,
    pub batch: u32,
    pub effective_hourly_price: f64,
    pub throughput: f64,
    pub cost_per_1k: f64,
}

impl CostRow {
    pub fn recompute(&self) -> Result<f64> {
        cost_per_1k(self.effective_hourly_price, 1, self.throughput)
    }
}

/// Cost rows for every configuration and curve point, in input order.
pub fn cost_report(config: &PricingConfig) -> Result<Vec<CostRow>> {
    let mut rows = Vec::new();
    for m in &config.configurations {
        m.validate()?;
        for p in &m.curve {
            rows.push(CostRow {
                configuration: m.name.clone(),
                batch: p.batch,
                effective_hourly_price: m.effective_hourly_price(),
                throughput: p.throughput,
                cost_per_1k: cost_per_1k(m.price_per_hour, m.nodes, p.throughput)?,
            });
        }
    }
    Ok(rows)
}

pub fn cost_rows_csv(rows: &[CostRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| EconError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Left-aligned first column, right-aligned others.
pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate().take(cols) {
            width[i] = width[i].max(c.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = width[i])
                } else {
                    format!("{c:>w$}", w = width[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub fn cost_rows_table(rows: &[CostRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.configuration.clone(),
                r.batch.to_string(),
                format!("{:.2}", r.effective_hourly_price),
                format!("{:.1}", r.throughput),
                format!("{:.4}", r.cost_per_1k),
            ]
        })
        .collect();
    aligned_table(&["configuration", "batch", "usd_per_hour", "samples_per_s", "usd_per_1k"], &body)
}

/// Smallest batch on the shared grid where `a` costs no more than `b`.
pub fn break_even_batch(a: &PricingModel, b: &PricingModel) -> Result<Option<u32>> {
    a.validate()?;
    b.validate()?;
    let mut grid: Vec<u32> = a
        .curve
        .iter()
        .map(|p| p.batch)
        .filter(|&batch| b.throughput_at(batch).is_some())
        .collect();
    if grid.is_empty() {
        return Err(EconError::Config(format!(
            "{} and {} share no batch sizes",
            a.name, b.name
        )));
    }
    grid.sort_unstable();
    for batch in grid {
        let ca = a.cost_at(batch).expect("on grid")?;
        let cb = b.cost_at(batch).expect("on grid")?;
        if ca <= cb {
            return Ok(Some(batch));
        }
    }
    Ok(None)
}
