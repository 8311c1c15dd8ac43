//! Model parameters and inference.
//!
//! Structure per decision step: an attentive transformer (`fc → norm → ·prior →
//! sparsemax`) selects features, the masked input goes through a feature
//! transformer (two shared and two step-specific gated blocks), and the output
//! is split into a decision part (ReLU, summed into the head) and an attention
//! part that drives the next step's mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glu_forward, prior_update_value, softmax_into, BN_EPS};
use crate::config::ModelConfig;
use crate::error::{Result, TabNetError};
use crate::matrix::{FeatureMatrix, Matrix};
use crate::sparsemax::sparsemax_into;

pub(crate) const RESIDUAL_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;
pub(crate) const BLOCKS_PER_TRANSFORMER: usize = 4;
pub(crate) const SHARED_BLOCKS: usize = 2;

/// Indices of one normalization layer's affine parameters and running statistics.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NormSlot {
    pub gamma: usize,
    pub beta: usize,
    pub stats: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GluSlot {
    pub fc: usize,
    pub norm: NormSlot,
}

#[derive(Debug, Clone)]
pub(crate) struct AttentiveSlot {
    pub fc: usize,
    pub norm: NormSlot,
}

/// Where each tensor lives in the flat parameter and statistic lists. Derived
/// from the config, so it is never serialized.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub input_norm: NormSlot,
    /// `n_steps + 1` transformers; index 0 is the initial splitter.
    pub transformers: Vec<[GluSlot; BLOCKS_PER_TRANSFORMER]>,
    pub attentive: Vec<AttentiveSlot>,
    pub head_w: usize,
    pub head_b: usize,
}

/// Frozen per-channel normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// A named parameter tensor with its shape.
#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    FanIn(usize),
    Const(f64),
}

pub(crate) fn build_layout(config: &ModelConfig) -> (Layout, Vec<ParamSpec>, Vec<usize>) {
    let f = config.feature_count;
    let h = config.hidden();
    let mut specs: Vec<ParamSpec> = Vec::new();
    let mut stat_widths: Vec<usize> = Vec::new();
    let norm = |specs: &mut Vec<ParamSpec>, stat_widths: &mut Vec<usize>, name: &str, width: usize| {
        let gamma = plain(specs, format!("{name}.gamma"), 1, width, Init::Const(1.0));
        let beta = plain(specs, format!("{name}.beta"), 1, width, Init::Const(0.0));
        stat_widths.push(width);
        NormSlot {
            gamma,
            beta,
            stats: stat_widths.len() - 1,
        }
    };
    fn plain(specs: &mut Vec<ParamSpec>, name: String, rows: usize, cols: usize, init: Init) -> usize {
        specs.push(ParamSpec { name, rows, cols, init });
        specs.len() - 1
    }

    let input_norm = norm(&mut specs, &mut stat_widths, "input_norm", f);
    let shared_fc = [
        plain(&mut specs, "shared.0.fc".into(), f, 2 * h, Init::FanIn(f)),
        plain(&mut specs, "shared.1.fc".into(), h, 2 * h, Init::FanIn(h)),
    ];
    let mut transformers = Vec::with_capacity(config.n_steps + 1);
    for t in 0..=config.n_steps {
        let mut blocks = Vec::with_capacity(BLOCKS_PER_TRANSFORMER);
        for (b, &fc) in shared_fc.iter().enumerate() {
            let n = norm(&mut specs, &mut stat_widths, &format!("transformer.{t}.shared.{b}.norm"), 2 * h);
            blocks.push(GluSlot { fc, norm: n });
        }
        for b in 0..BLOCKS_PER_TRANSFORMER - SHARED_BLOCKS {
            let fc = plain(&mut specs, format!("transformer.{t}.step.{b}.fc"), h, 2 * h, Init::FanIn(h));
            let n = norm(&mut specs, &mut stat_widths, &format!("transformer.{t}.step.{b}.norm"), 2 * h);
            blocks.push(GluSlot { fc, norm: n });
        }
        transformers.push([blocks[0], blocks[1], blocks[2], blocks[3]]);
    }
    let mut attentive = Vec::with_capacity(config.n_steps);
    for s in 0..config.n_steps {
        let fc = plain(
            &mut specs,
            format!("attentive.{s}.fc"),
            config.n_a,
            f,
            Init::FanIn(config.n_a),
        );
        let n = norm(&mut specs, &mut stat_widths, &format!("attentive.{s}.norm"), f);
        attentive.push(AttentiveSlot { fc, norm: n });
    }
    let head_w = plain(
        &mut specs,
        "head.weight".into(),
        config.n_d,
        config.n_classes,
        Init::FanIn(config.n_d),
    );
    let head_b = plain(&mut specs, "head.bias".into(), 1, config.n_classes, Init::Const(0.0));
    (
        Layout {
            input_norm,
            transformers,
            attentive,
            head_w,
            head_b,
        },
        specs,
        stat_widths,
    )
}

/// Whether inference normalizes with frozen running statistics or with the
/// statistics of the batch being scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InferenceNorm {
    #[default]
    Frozen,
    /// Uses the statistics of the incoming batch. Breaks batch-composition
    /// invariance; exists only as a negative control for the invariance checks.
    BatchStatistics,
}

/// Per-step feature masks and the aggregated per-feature importance of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// `n_steps` rows of `feature_count` entries, each row on the simplex.
    pub step_masks: Vec<Vec<f64>>,
    /// Non-negative, sums to 1.
    pub aggregate_importance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutput {
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
    pub explanation: Explanation,
}

/// Trained parameter bundle: config, weights, frozen normalization statistics and a version tag.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub(crate) config: ModelConfig,
    pub(crate) layout: Layout,
    pub(crate) param_names: Vec<String>,
    pub(crate) params: Vec<Matrix>,
    pub(crate) norm_stats: Vec<NormStats>,
    pub(crate) model_version: String,
    pub(crate) inference_norm: InferenceNorm,
}

impl TrainedModel {
    /// Freshly initialized model (uniform weights scaled by fan-in, seeded).
    pub fn initialize(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, specs, stat_widths) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = specs
            .iter()
            .map(|s| match s.init {
                Init::Const(v) => Matrix::filled(s.rows, s.cols, v),
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let data = (0..s.rows * s.cols).map(|_| rng.gen_range(-bound..bound)).collect();
                    Matrix::from_vec(s.rows, s.cols, data)
                }
            })
            .collect();
        let norm_stats = stat_widths
            .iter()
            .map(|&w| NormStats {
                mean: vec![0.0; w],
                var: vec![1.0; w],
            })
            .collect();
        Ok(Self {
            param_names: specs.iter().map(|s| s.name.clone()).collect(),
            config,
            layout,
            params,
            norm_stats,
            model_version: "untrained".into(),
            inference_norm: InferenceNorm::Frozen,
        })
    }

    /// Reassembles a model from raw parts, validating every shape.
    pub(crate) fn from_parts(
        config: ModelConfig,
        params: Vec<Matrix>,
        norm_stats: Vec<NormStats>,
        model_version: String,
    ) -> Result<Self> {
        config.validate()?;
        if model_version.is_empty() {
            return Err(TabNetError::Configuration("model_version must be non-empty".into()));
        }
        let (layout, specs, stat_widths) = build_layout(&config);
        if params.len() != specs.len() {
            return Err(TabNetError::Configuration(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter().zip(&specs) {
            if p.shape() != (s.rows, s.cols) {
                return Err(TabNetError::Configuration(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    p.shape(),
                    (s.rows, s.cols)
                )));
            }
        }
        if norm_stats.len() != stat_widths.len() {
            return Err(TabNetError::Configuration("normalization statistics count mismatch".into()));
        }
        for (n, &w) in norm_stats.iter().zip(&stat_widths) {
            if n.mean.len() != w || n.var.len() != w {
                return Err(TabNetError::Configuration("normalization statistics width mismatch".into()));
            }
            if n.var.iter().any(|v| !(*v > 0.0 && v.is_finite())) || n.mean.iter().any(|m| !m.is_finite()) {
                return Err(TabNetError::Configuration(
                    "normalization variances must be finite and positive".into(),
                ));
            }
        }
        Ok(Self {
            param_names: specs.into_iter().map(|s| s.name).collect(),
            config,
            layout,
            params,
            norm_stats,
            model_version,
            inference_norm: InferenceNorm::Frozen,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn set_model_version(&mut self, version: impl Into<String>) -> Result<()> {
        let v = version.into();
        if v.is_empty() {
            return Err(TabNetError::Configuration("model_version must be non-empty".into()));
        }
        self.model_version = v;
        Ok(())
    }

    pub fn norm_stats(&self) -> &[NormStats] {
        &self.norm_stats
    }

    /// Parameter tensors in layout order, paired with their names.
    pub fn parameters(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.param_names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn parameters_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn inference_norm(&self) -> InferenceNorm {
        self.inference_norm
    }

    /// Negative-control copy whose inference normalizes with batch statistics.
    pub fn with_unfrozen_normalization(&self) -> Self {
        let mut m = self.clone();
        m.inference_norm = InferenceNorm::BatchStatistics;
        m
    }

    fn normalize(&self, x: &Matrix, slot: NormSlot) -> Matrix {
        let gamma = &self.params[slot.gamma].data;
        let beta = &self.params[slot.beta].data;
        let (mean, var) = match self.inference_norm {
            InferenceNorm::Frozen => {
                let s = &self.norm_stats[slot.stats];
                (s.mean.clone(), s.var.clone())
            }
            InferenceNorm::BatchStatistics => column_stats(x),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut out = Matrix::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let src = x.row(r);
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = (src[c] - mean[c]) * inv_std[c] * gamma[c] + beta[c];
            }
        }
        out
    }

    fn feature_transform(&self, x: &Matrix, blocks: &[GluSlot; BLOCKS_PER_TRANSFORMER]) -> Matrix {
        let mut h = glu_forward(&self.normalize(&x.matmul(&self.params[blocks[0].fc]), blocks[0].norm));
        for block in &blocks[1..] {
            let g = glu_forward(&self.normalize(&h.matmul(&self.params[block.fc]), block.norm));
            for (hv, gv) in h.data.iter_mut().zip(&g.data) {
                *hv = (*hv + gv) * RESIDUAL_SCALE;
            }
        }
        h
    }

    /// One attentive step for a batch: `mask = sparsemax(prior ⊙ norm(state · W))`,
    /// then `prior ← min(gamma, prior ⊙ (gamma − mask))`.
    fn attentive(&self, state: &Matrix, prior: &mut Matrix, step: usize) -> Matrix {
        let slot = &self.layout.attentive[step];
        let mut logits = self.normalize(&state.matmul(&self.params[slot.fc]), slot.norm);
        for (l, p) in logits.data.iter_mut().zip(&prior.data) {
            *l *= p;
        }
        let mut mask = Matrix::zeros(logits.rows, logits.cols);
        let mut scratch = Vec::with_capacity(logits.cols);
        for r in 0..logits.rows {
            sparsemax_into(logits.row(r), mask.row_mut(r), &mut scratch);
        }
        let gamma = self.config.gamma;
        for (p, m) in prior.data.iter_mut().zip(&mask.data) {
            *p = prior_update_value(*p, *m, gamma);
        }
        mask
    }

    /// Single-sample attentive step. `state` has width `n_a`, `prior` has width
    /// `feature_count` with entries in `[0, gamma]`.
    pub fn attentive_step(&self, state: &[f64], prior: &[f64], step_index: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let f = self.config.feature_count;
        if step_index >= self.config.n_steps {
            return Err(TabNetError::Configuration(format!(
                "step {step_index} out of range for {} steps",
                self.config.n_steps
            )));
        }
        if state.len() != self.config.n_a || prior.len() != f {
            return Err(TabNetError::Configuration(format!(
                "attentive step expects state width {} and prior width {f}, got {} and {}",
                self.config.n_a,
                state.len(),
                prior.len()
            )));
        }
        if prior.iter().any(|p| !(0.0..=self.config.gamma).contains(p)) {
            return Err(TabNetError::InvalidInput("prior entries must lie in [0, gamma]".into()));
        }
        let s = Matrix::from_vec(1, state.len(), state.to_vec());
        let mut p = Matrix::from_vec(1, f, prior.to_vec());
        let mask = self.attentive(&s, &mut p, step_index);
        Ok((mask.data, p.data))
    }

    fn check_batch(&self, batch: &FeatureMatrix) -> Result<()> {
        if batch.cols() != self.config.feature_count {
            return Err(TabNetError::InvalidInput(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.config.feature_count
            )));
        }
        if batch.values().iter().any(|v| !v.is_finite()) {
            return Err(TabNetError::InvalidInput("batch contains non-finite features".into()));
        }
        Ok(())
    }

    /// Raw class logits and per-step masks; shared by `forward` and evaluation helpers.
    pub(crate) fn forward_raw(&self, x: &Matrix) -> (Matrix, Vec<Matrix>, Vec<Vec<f64>>) {
        let n_d = self.config.n_d;
        let h = self.config.hidden();
        let x_norm = self.normalize(x, self.layout.input_norm);
        let first = self.feature_transform(&x_norm, &self.layout.transformers[0]);
        let mut att = first.slice_cols(n_d, h);
        let mut prior = Matrix::filled(x.rows, x.cols, 1.0);
        let mut decision = Matrix::zeros(x.rows, n_d);
        let mut masks = Vec::with_capacity(self.config.n_steps);
        let mut step_weights = Vec::with_capacity(self.config.n_steps);
        for step in 0..self.config.n_steps {
            let mask = self.attentive(&att, &mut prior, step);
            let masked = mask.zip_map(&x_norm, |m, v| m * v);
            let out = self.feature_transform(&masked, &self.layout.transformers[step + 1]);
            let mut weights = vec![0.0; x.rows];
            for r in 0..x.rows {
                let row = out.row(r);
                let dec = decision.row_mut(r);
                for (c, d) in dec.iter_mut().enumerate() {
                    let v = row[c].max(0.0);
                    *d += v;
                    weights[r] += v;
                }
            }
            att = out.slice_cols(n_d, h);
            masks.push(mask);
            step_weights.push(weights);
        }
        let mut logits = decision.matmul(&self.params[self.layout.head_w]);
        let bias = &self.params[self.layout.head_b].data;
        for r in 0..logits.rows {
            for (l, b) in logits.row_mut(r).iter_mut().zip(bias) {
                *l += b;
            }
        }
        (logits, masks, step_weights)
    }

    /// Scores a batch. Each output depends only on its own row; the batch it
    /// arrives in does not matter (normalization uses frozen statistics).
    pub fn forward(&self, batch: &FeatureMatrix) -> Result<Vec<PredictionOutput>> {
        self.check_batch(batch)?;
        if batch.rows() == 0 {
            return Ok(Vec::new());
        }
        let x = batch.to_matrix();
        let (logits, masks, weights) = self.forward_raw(&x);
        let f = self.config.feature_count;
        let mut outputs = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let mut probabilities = vec![0.0; self.config.n_classes];
            softmax_into(logits.row(r), &mut probabilities);
            let predicted_class = argmax(&probabilities);
            let step_masks: Vec<Vec<f64>> = masks.iter().map(|m| m.row(r).to_vec()).collect();
            let mut agg = vec![0.0; f];
            for (mask, w) in step_masks.iter().zip(&weights) {
                for (a, m) in agg.iter_mut().zip(mask) {
                    *a += w[r] * m;
                }
            }
            let total: f64 = agg.iter().sum();
            if total > 0.0 {
                agg.iter_mut().for_each(|a| *a /= total);
            } else {
                // No step contributed a positive decision: fall back to the plain mask average.
                let n = step_masks.len() as f64;
                agg.iter_mut().for_each(|a| *a = 0.0);
                for mask in &step_masks {
                    for (a, m) in agg.iter_mut().zip(mask) {
                        *a += m / n;
                    }
                }
            }
            outputs.push(PredictionOutput {
                probabilities,
                predicted_class,
                explanation: Explanation {
                    step_masks,
                    aggregate_importance: agg,
                },
            });
        }
        Ok(outputs)
    }

    /// Positive-class probability for each row of a binary model (class 1).
    pub fn predict_proba(&self, batch: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_batch(batch)?;
        if batch.rows() == 0 {
            return Ok(Vec::new());
        }
        let (logits, _, _) = self.forward_raw(&batch.to_matrix());
        Ok((0..logits.rows)
            .map(|r| {
                let mut p = vec![0.0; self.config.n_classes];
                softmax_into(logits.row(r), &mut p);
                p
            })
            .collect())
    }
}

/// Lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows.max(1) as f64;
    let mut mean = vec![0.0; x.cols];
    for r in 0..x.rows {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; x.cols];
    for r in 0..x.rows {
        for ((acc, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(gamma: f64) -> TrainedModel {
        let mut cfg = ModelConfig::new(5, 2).with_seed(7);
        cfg.gamma = gamma;
        TrainedModel::initialize(cfg).unwrap()
    }

    #[test]
    fn layout_is_consistent() {
        let m = small_model(1.3);
        let (_, specs, widths) = build_layout(m.config());
        assert_eq!(specs.len(), m.params.len());
        assert_eq!(widths.len(), m.norm_stats.len());
        // input norm + 4 per transformer (4 transformers) + 3 attentive
        assert_eq!(widths.len(), 1 + 4 * 4 + 3);
    }

    #[test]
    fn attentive_step_fully_used_feature_is_exhausted() {
        let m = small_model(1.0);
        // Large state drives a strongly peaked mask; find whichever feature wins.
        let state = vec![3.0; m.config.n_a];
        let prior = vec![1.0; 5];
        let (mask, new_prior) = m.attentive_step(&state, &prior, 0).unwrap();
        for j in 0..5 {
            if mask[j] == 1.0 {
                assert_eq!(new_prior[j], 0.0);
            }
            if mask[j] == 0.0 {
                assert_eq!(new_prior[j], prior[j]);
            }
            assert!(new_prior[j] <= prior[j]);
        }
        let s: f64 = mask.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attentive_step_shape_errors() {
        let m = small_model(1.3);
        assert!(matches!(
            m.attentive_step(&[0.0; 3], &[1.0; 5], 0),
            Err(TabNetError::Configuration(_))
        ));
        assert!(matches!(
            m.attentive_step(&[0.0; 8], &[1.0; 4], 0),
            Err(TabNetError::Configuration(_))
        ));
        assert!(m.attentive_step(&[0.0; 8], &[1.0; 5], 3).is_err());
    }

    #[test]
    fn forward_rejects_bad_width() {
        let m = small_model(1.3);
        let batch = FeatureMatrix::from_rows(&[vec![0.0; 4]]).unwrap();
        assert!(matches!(m.forward(&batch), Err(TabNetError::InvalidInput(_))));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
