//! Partition-based stability of aggregate feature importance.
//!
//! Samples are split into B equal batches and the mean importance vector of
//! each batch is computed. Per feature, stability is `max(0, 1 − σ/μ)` over
//! the B batch means, with σ the sample standard deviation. Rank variance is
//! the across-batch variance of each feature's importance rank, divided by
//! `(F² − 1)/12` (the variance of a uniform rank) and averaged over features.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};
use tabnet_core::{FeatureMatrix, TrainedModel};

use crate::error::{EvalError, Result};

pub const FORMULA: &str = "stability_f = max(0, 1 - sd_f / mean_f) over B batch-mean importances \
(sd with B-1 denominator; mean_f = 0 gives 1 if all batch values are 0, else 0); \
rank_variance = mean_f Var_b(rank_f,b) / ((F^2 - 1) / 12), ranks 1 = most important, ties averaged";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStability {
    pub feature: String,
    /// Mean importance over all batches.
    pub importance: f64,
    pub stability: f64,
    pub mean_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub formula: String,
    pub partitions: usize,
    pub rows_per_partition: usize,
    /// Rows left out so every partition has the same size.
    pub rows_dropped: usize,
    pub rank_variance: f64,
    /// Sorted by importance, most important first.
    pub features: Vec<FeatureStability>,
}

impl StabilityReport {
    pub fn top(&self, k: usize) -> &[FeatureStability] {
        &self.features[..k.min(self.features.len())]
    }

    /// CSV with columns feature, importance, stability.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["feature", "importance", "stability"])?;
        for f in &self.features {
            out.write_record([f.feature.clone(), format!("{:.4}", f.importance), format!("{:.4}", f.stability)])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coefficient-of-variation stability of one feature's batch means.
pub fn feature_stability(batch_means: &[f64]) -> f64 {
    let mu = mean(batch_means);
    if mu == 0.0 {
        return if batch_means.iter().all(|v| *v == 0.0) { 1.0 } else { 0.0 };
    }
    (1.0 - sample_sd(batch_means) / mu.abs()).max(0.0)
}

/// Sample standard deviation computed on deviations from the first value,
/// so a constant series gives exactly zero regardless of rounding in the mean.
fn sample_sd(values: &[f64]) -> f64 {
    let shift = values[0];
    let d: Vec<f64> = values.iter().map(|v| v - shift).collect();
    let m = mean(&d);
    let n = values.len() as f64;
    (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Ranks with 1 for the largest value; ties share their average rank.
pub fn descending_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Normalized rank variance over batches (rows of `batch_means`).
pub fn normalized_rank_variance(batch_means: &[Vec<f64>]) -> f64 {
    let f = batch_means[0].len();
    if f < 2 {
        return 0.0;
    }
    let ranks: Vec<Vec<f64>> = batch_means.iter().map(|b| descending_ranks(b)).collect();
    let max_var = ((f * f - 1) as f64) / 12.0;
    let b = ranks.len() as f64;
    let total: f64 = (0..f)
        .map(|j| {
            let col: Vec<f64> = ranks.iter().map(|r| r[j]).collect();
            let m = mean(&col);
            col.iter().map(|r| (r - m).powi(2)).sum::<f64>() / b
        })
        .sum();
    total / f as f64 / max_var
}

/// Scores stability from precomputed per-batch mean importance vectors.
pub fn stability_from_batches(batch_means: &[Vec<f64>], names: &[String], rows_per_partition: usize, rows_dropped: usize) -> Result<StabilityReport> {
    if batch_means.len() < 2 {
        return Err(EvalError::Input("at least two partitions are required".into()));
    }
    let f = batch_means[0].len();
    if f == 0 || batch_means.iter().any(|b| b.len() != f) || names.len() != f {
        return Err(EvalError::Input("batch vectors and names must share one non-zero width".into()));
    }
    if batch_means.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EvalError::Input("importance values must be finite".into()));
    }
    let ranks: Vec<Vec<f64>> = batch_means.iter().map(|b| descending_ranks(b)).collect();
    let mut features: Vec<FeatureStability> = (0..f)
        .map(|j| {
            let col: Vec<f64> = batch_means.iter().map(|b| b[j]).collect();
            FeatureStability {
                feature: names[j].clone(),
                importance: mean(&col),
                stability: feature_stability(&col),
                mean_rank: mean(&ranks.iter().map(|r| r[j]).collect::<Vec<_>>()),
            }
        })
        .collect();
    features.sort_by(|a, b| {
        b.importance
            .partial_cmp(&a.importance)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    Ok(StabilityReport {
        formula: FORMULA.to_string(),
        partitions: batch_means.len(),
        rows_per_partition,
        rows_dropped,
        rank_variance: normalized_rank_variance(batch_means),
        features,
    })
}

/// Splits `samples` into `partitions` equal consecutive batches, scores each
/// batch with the model and reports importance stability across batches.
pub fn stability_score(model: &TrainedModel, samples: &FeatureMatrix, partitions: usize) -> Result<StabilityReport> {
    if partitions < 2 || samples.rows() < partitions {
        return Err(EvalError::Input(format!(
            "need rows >= partitions >= 2, got {} rows and {partitions} partitions",
            samples.rows()
        )));
    }
    let per = samples.rows() / partitions;
    let dropped = samples.rows() - per * partitions;
    let mut batch_means = Vec::with_capacity(partitions);
    for b in 0..partitions {
        let idx: Vec<usize> = (b * per..(b + 1) * per).collect();
        let out = model.forward(&samples.select_rows(&idx))?;
        let mut acc = vec![0.0; samples.cols()];
        for o in &out {
            for (a, v) in acc.iter_mut().zip(&o.explanation.aggregate_importance) {
                *a += v;
            }
        }
        batch_means.push(acc.into_iter().map(|v| v / per as f64).collect());
    }
    stability_from_batches(&batch_means, samples.column_names(), per, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(descending_ranks(&[0.1, 0.5, 0.5, 0.0]), vec![3.0, 1.5, 1.5, 4.0]);
    }

    #[test]
    fn zero_mean_rule() {
        assert_eq!(feature_stability(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(feature_stability(&[0.1, -0.1]), 0.0);
    }

    #[test]
    fn wildly_varying_feature_floors_at_zero() {
        assert_eq!(feature_stability(&[0.0, 0.0, 0.0, 1.0]), 0.0);
    }

    #[test]
    fn reversed_ranks_have_maximal_normalized_variance() {
        // ranks (1,2,3) and (3,2,1) have per-feature variances 1, 0, 1, so the
        // mean 2/3 equals (F² − 1)/12 for F = 3
        let b = vec![vec![3.0, 2.0, 1.0], vec![1.0, 2.0, 3.0]];
        assert!((normalized_rank_variance(&b) - 1.0).abs() < 1e-12);
    }
}
