use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tabnet_core::FeatureMatrix;

use crate::error::{PipelineError, Result};
use crate::ingest::{Cell, RawTable};
use crate::schema::ColumnKind;

/// Level name used for missing categorical values.
pub const MISSING_LEVEL: &str = "missing";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// `(x - mean) / std`; missing values are replaced by `median` first.
    Standardize { mean: f64, std: f64, median: f64 },
    OneHot { levels: Vec<String> },
    /// Level index scaled to `[0, 1]`; missing values take `fill`.
    OrdinalMap { levels: Vec<String>, fill: f64 },
    Passthrough,
}

impl Transform {
    fn width(&self) -> usize {
        match self {
            Transform::OneHot { levels } => levels.len(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnPlan {
    pub source: String,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanWarning {
    pub column: String,
    pub reason: String,
}

/// Fitted per-column transforms. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    dataset: String,
    fingerprint: String,
    target: String,
    target_levels: Vec<String>,
    columns: Vec<ColumnPlan>,
    warnings: Vec<PlanWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    /// Per source column, number of rows whose category was not seen at fit time.
    pub unseen_categories: BTreeMap<String, usize>,
}

/// SHA-256 over the schema labels and every cell, hex encoded.
pub fn fingerprint(table: &RawTable) -> String {
    let mut h = Sha256::new();
    h.update(table.schema().name.as_bytes());
    for label in table.schema().labels() {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
    }
    for row in table.rows() {
        for cell in row {
            match cell {
                Cell::Num(v) => {
                    h.update([1]);
                    h.update(v.to_le_bytes());
                }
                Cell::Text(s) => {
                    h.update([2]);
                    h.update((s.len() as u64).to_le_bytes());
                    h.update(s.as_bytes());
                }
                Cell::Time(v) => {
                    h.update([3]);
                    h.update(v.to_le_bytes());
                }
                Cell::Missing => h.update([0]),
            }
        }
    }
    hex::encode(h.finalize())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn is_constant(std: f64, mean: f64) -> bool {
    std <= f64::EPSILON * mean.abs().max(1.0)
}

fn numeric_values(cells: &[&Cell]) -> Vec<Option<f64>> {
    cells
        .iter()
        .map(|c| match c {
            Cell::Num(v) | Cell::Time(v) => Some(*v),
            _ => None,
        })
        .collect()
}

fn fit_standardize(label: &str, cells: &[&Cell], warnings: &mut Vec<PlanWarning>) -> Option<Transform> {
    let vals = numeric_values(cells);
    let mut present: Vec<f64> = vals.iter().flatten().copied().collect();
    if present.is_empty() {
        warnings.push(PlanWarning {
            column: label.into(),
            reason: "no observed values; column excluded".into(),
        });
        return None;
    }
    let med = median(&mut present);
    let filled: Vec<f64> = vals.iter().map(|v| v.unwrap_or(med)).collect();
    let n = filled.len() as f64;
    let mean = filled.iter().sum::<f64>() / n;
    let var = filled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if is_constant(std, mean) {
        warnings.push(PlanWarning {
            column: label.into(),
            reason: format!("zero variance (constant {mean}); column excluded"),
        });
        return None;
    }
    Some(Transform::Standardize { mean, std, median: med })
}

fn fit_one_hot(label: &str, cells: &[&Cell], warnings: &mut Vec<PlanWarning>) -> Option<Transform> {
    let mut levels = BTreeSet::new();
    let mut saw_missing = false;
    for c in cells {
        match c {
            Cell::Text(s) => {
                levels.insert(s.clone());
            }
            _ => saw_missing = true,
        }
    }
    let mut levels: Vec<String> = levels.into_iter().collect();
    if saw_missing && !levels.iter().any(|l| l == MISSING_LEVEL) {
        levels.push(MISSING_LEVEL.into());
    }
    if levels.len() < 2 {
        warnings.push(PlanWarning {
            column: label.into(),
            reason: format!("single level {:?}; column excluded", levels.first()),
        });
        return None;
    }
    Some(Transform::OneHot { levels })
}

fn ordinal_value(levels: &[String], s: &str) -> Option<f64> {
    let idx = levels.iter().position(|l| l == s)?;
    let denom = (levels.len() - 1).max(1) as f64;
    Some(idx as f64 / denom)
}

fn fit_ordinal(label: &str, levels: &[String], cells: &[&Cell], warnings: &mut Vec<PlanWarning>) -> Option<Transform> {
    let mut present: Vec<f64> = cells
        .iter()
        .filter_map(|c| match c {
            Cell::Text(s) => ordinal_value(levels, s),
            _ => None,
        })
        .collect();
    if present.is_empty() || present.iter().all(|&v| v == present[0]) {
        warnings.push(PlanWarning {
            column: label.into(),
            reason: "ordinal column takes a single level; column excluded".into(),
        });
        return None;
    }
    let fill = median(&mut present);
    Some(Transform::OrdinalMap {
        levels: levels.to_vec(),
        fill,
    })
}

impl PreprocessPlan {
    /// Fits transforms on `table`. The target must be categorical or ordinal.
    pub fn fit(table: &RawTable) -> Result<Self> {
        if table.is_empty() {
            return Err(PipelineError::EmptyInput("no rows left after quarantine".into()));
        }
        let schema = table.schema();
        let target_idx = table.column_index(&schema.target).expect("validated schema has its target");
        let target_levels = match &schema.columns[target_idx].kind {
            ColumnKind::Categorical => {
                let mut set = BTreeSet::new();
                for (r, row) in table.rows().iter().enumerate() {
                    match &row[target_idx] {
                        Cell::Text(s) => {
                            set.insert(s.clone());
                        }
                        _ => {
                            return Err(PipelineError::Preprocess(format!(
                                "row {} has no value for target {:?}",
                                r + 1,
                                schema.target
                            )))
                        }
                    }
                }
                set.into_iter().collect::<Vec<_>>()
            }
            ColumnKind::Ordinal(levels) => levels.clone(),
            other => {
                return Err(PipelineError::Preprocess(format!(
                    "target {:?} must be categorical or ordinal, found {other:?}",
                    schema.target
                )))
            }
        };

        let mut columns = Vec::new();
        let mut warnings = Vec::new();
        for (i, spec) in schema.columns.iter().enumerate() {
            if i == target_idx {
                continue;
            }
            let cells: Vec<&Cell> = table.rows().iter().map(|r| &r[i]).collect();
            let transform = match &spec.kind {
                ColumnKind::Numeric | ColumnKind::Timestamp => fit_standardize(&spec.label, &cells, &mut warnings),
                ColumnKind::Categorical => fit_one_hot(&spec.label, &cells, &mut warnings),
                ColumnKind::Ordinal(levels) => fit_ordinal(&spec.label, levels, &cells, &mut warnings),
                ColumnKind::Identifier => None,
            };
            if let Some(transform) = transform {
                columns.push(ColumnPlan {
                    source: spec.label.clone(),
                    transform,
                });
            }
        }
        for w in &warnings {
            tracing::warn!(column = %w.column, reason = %w.reason, "preprocessing warning");
        }
        Ok(Self {
            dataset: schema.name.clone(),
            fingerprint: fingerprint(table),
            target: schema.target.clone(),
            target_levels,
            columns,
            warnings,
        })
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    /// Fingerprint of the table this plan was fitted on.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn target_levels(&self) -> &[String] {
        &self.target_levels
    }

    pub fn columns(&self) -> &[ColumnPlan] {
        &self.columns
    }

    pub fn warnings(&self) -> &[PlanWarning] {
        &self.warnings
    }

    pub fn output_width(&self) -> usize {
        self.columns.iter().map(|c| c.transform.width()).sum()
    }

    pub fn output_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.output_width());
        for c in &self.columns {
            match &c.transform {
                Transform::OneHot { levels } => names.extend(levels.iter().map(|l| format!("{}={l}", c.source))),
                _ => names.push(c.source.clone()),
            }
        }
        names
    }

    /// Applies the fitted transforms. Pure: the same table always yields the
    /// same bits.
    pub fn apply(&self, table: &RawTable) -> Result<Preprocessed> {
        let width = self.output_width();
        let mut idx = Vec::with_capacity(self.columns.len());
        for c in &self.columns {
            idx.push(
                table
                    .column_index(&c.source)
                    .ok_or_else(|| PipelineError::MissingColumns(vec![c.source.clone()]))?,
            );
        }
        let target_idx = table
            .column_index(&self.target)
            .ok_or_else(|| PipelineError::MissingColumns(vec![self.target.clone()]))?;

        let mut values = Vec::with_capacity(table.len() * width);
        let mut unseen: BTreeMap<String, usize> = BTreeMap::new();
        let mut labels = Vec::with_capacity(table.len());
        for (r, row) in table.rows().iter().enumerate() {
            for (plan, &i) in self.columns.iter().zip(&idx) {
                let cell = &row[i];
                match &plan.transform {
                    Transform::Standardize { mean, std, median } => {
                        let v = match cell {
                            Cell::Num(v) | Cell::Time(v) => *v,
                            Cell::Missing => *median,
                            Cell::Text(s) => {
                                return Err(PipelineError::Preprocess(format!(
                                    "row {}: text {s:?} in numeric column {:?}",
                                    r + 1,
                                    plan.source
                                )))
                            }
                        };
                        values.push((v - mean) / std);
                    }
                    Transform::OneHot { levels } => {
                        let key = match cell {
                            Cell::Text(s) => s.as_str(),
                            _ => MISSING_LEVEL,
                        };
                        let hit = levels.iter().position(|l| l == key);
                        if hit.is_none() {
                            *unseen.entry(plan.source.clone()).or_default() += 1;
                        }
                        values.extend((0..levels.len()).map(|k| if Some(k) == hit { 1.0 } else { 0.0 }));
                    }
                    Transform::OrdinalMap { levels, fill } => {
                        let v = match cell {
                            Cell::Text(s) => ordinal_value(levels, s).unwrap_or_else(|| {
                                *unseen.entry(plan.source.clone()).or_default() += 1;
                                *fill
                            }),
                            _ => *fill,
                        };
                        values.push(v);
                    }
                    Transform::Passthrough => values.push(match cell {
                        Cell::Num(v) | Cell::Time(v) => *v,
                        _ => 0.0,
                    }),
                }
            }
            let label = match &row[target_idx] {
                Cell::Text(s) => self.target_levels.iter().position(|l| l == s),
                _ => None,
            };
            labels.push(label.ok_or_else(|| {
                PipelineError::Preprocess(format!("row {}: target value not among fitted levels", r + 1))
            })?);
        }
        for (col, n) in &unseen {
            tracing::warn!(column = %col, rows = n, "unseen categories mapped to zeros");
        }
        let features = FeatureMatrix::new(table.len(), width, values, self.output_names())?;
        Ok(Preprocessed {
            features,
            labels,
            unseen_categories: unseen,
        })
    }
}

/// Fits a plan on `table` and applies it to the same rows.
pub fn fit_transform(table: &RawTable) -> Result<(Preprocessed, PreprocessPlan)> {
    let plan = PreprocessPlan::fit(table)?;
    let out = plan.apply(table)?;
    Ok((out, plan))
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
    fn ordinal_scaling() {
        let levels: Vec<String> = ["lo", "mid", "hi"].iter().map(|s| s.to_string()).collect();
        assert_eq!(ordinal_value(&levels, "lo"), Some(0.0));
        assert_eq!(ordinal_value(&levels, "mid"), Some(0.5));
        assert_eq!(ordinal_value(&levels, "hi"), Some(1.0));
        assert_eq!(ordinal_value(&levels, "x"), None);
    }
}
