//! Mini-batch training: cross-entropy plus `lambda_sparse` × mean mask entropy,
//! ghost-batch normalization, SGD with momentum and step decay, early stopping
//! on a held-out split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ChunkStats, Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Result, TabNetError};
use crate::matrix::{FeatureMatrix, Matrix};
use crate::model::{NormSlot, NormStats, TrainedModel, BLOCKS_PER_TRANSFORMER, RESIDUAL_SCALE};

/// Optimization schedule. Defaults follow the usual TabNet recipe at desk scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Ghost (virtual) batch size for normalization statistics during training.
    pub virtual_batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Multiply the learning rate by `lr_decay` every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
    /// Fraction of the rows held out for early stopping.
    pub validation_fraction: f64,
    /// Running-statistic update rate for normalization layers.
    pub norm_momentum: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            batch_size: 256,
            virtual_batch_size: 128,
            learning_rate: 0.02,
            momentum: 0.9,
            lr_decay: 0.9,
            decay_every: 20,
            patience: 30,
            validation_fraction: 0.15,
            norm_momentum: 0.02,
            clip_norm: 2.0,
            seed: 0,
        }
    }
}

impl TrainingSchedule {
    fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TabNetError::Configuration(m.into()));
        if self.max_epochs == 0 || self.batch_size < 2 || self.virtual_batch_size < 2 {
            return fail("max_epochs ≥ 1, batch_size ≥ 2 and virtual_batch_size ≥ 2 are required");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return fail("learning_rate must be positive and momentum in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail("validation_fraction must be in [0, 1)");
        }
        if !(self.norm_momentum > 0.0 && self.norm_momentum <= 1.0) {
            return fail("norm_momentum must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_objective: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Objective (CE + λ·entropy) on the training split at initialization.
    pub initial_objective: f64,
    /// Same objective for the returned model.
    pub final_objective: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Copy)]
pub(crate) enum NormMode {
    Ghost(usize),
    Frozen,
}

pub(crate) struct Graph {
    pub objective: Var,
    pub cross_entropy: Var,
    pub params: Vec<Var>,
    pub stats: Vec<(usize, Vec<ChunkStats>)>,
}

fn norm_node(
    model: &TrainedModel,
    tape: &mut Tape,
    params: &[Var],
    x: Var,
    slot: NormSlot,
    mode: NormMode,
    stats: &mut Vec<(usize, Vec<ChunkStats>)>,
) -> Var {
    match mode {
        NormMode::Ghost(size) => {
            let (v, s) = tape.ghost_batch_norm(x, params[slot.gamma], params[slot.beta], size);
            stats.push((slot.stats, s));
            v
        }
        NormMode::Frozen => {
            let ns = &model.norm_stats[slot.stats];
            tape.frozen_norm(x, params[slot.gamma], params[slot.beta], &ns.mean, &ns.var)
        }
    }
}

/// Records the full training objective on a tape.
pub(crate) fn build_graph(model: &TrainedModel, x: &Matrix, labels: &[usize], mode: NormMode) -> (Tape, Graph) {
    let cfg = &model.config;
    let mut tape = Tape::new();
    let params: Vec<Var> = model.params.iter().map(|p| tape.leaf(p.clone())).collect();
    let mut stats = Vec::new();
    let input = tape.leaf(x.clone());
    let x_norm = norm_node(model, &mut tape, &params, input, model.layout.input_norm, mode, &mut stats);

    let transform = |tape: &mut Tape, stats: &mut Vec<(usize, Vec<ChunkStats>)>, inp: Var, t: usize| -> Var {
        let blocks = &model.layout.transformers[t];
        let mut h: Option<Var> = None;
        for block in blocks.iter().take(BLOCKS_PER_TRANSFORMER) {
            let z = tape.matmul(h.unwrap_or(inp), params[block.fc]);
            let z = norm_node(model, tape, &params, z, block.norm, mode, stats);
            let g = tape.glu(z);
            h = Some(match h {
                None => g,
                Some(prev) => {
                    let sum = tape.add(prev, g);
                    tape.scale(sum, RESIDUAL_SCALE)
                }
            });
        }
        h.expect("transformer has blocks")
    };

    let first = transform(&mut tape, &mut stats, x_norm, 0);
    let mut att = tape.slice_cols(first, cfg.n_d, cfg.hidden());
    let mut prior = tape.leaf(Matrix::filled(x.rows, x.cols, 1.0));
    let mut decision: Option<Var> = None;
    let mut entropy: Option<Var> = None;
    for step in 0..cfg.n_steps {
        let slot = &model.layout.attentive[step];
        let z = tape.matmul(att, params[slot.fc]);
        let z = norm_node(model, &mut tape, &params, z, slot.norm, mode, &mut stats);
        let z = tape.mul(z, prior);
        let mask = tape.sparsemax_rows(z);
        prior = tape.prior_update(prior, mask, cfg.gamma);
        let e = tape.mask_entropy(mask);
        entropy = Some(match entropy {
            None => e,
            Some(acc) => tape.add(acc, e),
        });
        let masked = tape.mul(mask, x_norm);
        let out = transform(&mut tape, &mut stats, masked, step + 1);
        let d = tape.slice_cols(out, 0, cfg.n_d);
        let d = tape.relu(d);
        decision = Some(match decision {
            None => d,
            Some(acc) => tape.add(acc, d),
        });
        att = tape.slice_cols(out, cfg.n_d, cfg.hidden());
    }
    let decision = decision.expect("n_steps ≥ 1");
    let logits = tape.matmul(decision, params[model.layout.head_w]);
    let logits = tape.add_bias(logits, params[model.layout.head_b]);
    let ce = tape.softmax_cross_entropy(logits, labels);
    let reg = tape.scale(entropy.expect("n_steps ≥ 1"), cfg.lambda_sparse / cfg.n_steps as f64);
    let objective = tape.add(ce, reg);
    (
        tape,
        Graph {
            objective,
            cross_entropy: ce,
            params,
            stats,
        },
    )
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(TabNetError::InvalidInput(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    Ok(())
}

impl TrainedModel {
    /// Training-mode objective (ghost-batch statistics) for the given rows.
    pub fn objective(&self, data: &FeatureMatrix, labels: &[usize], virtual_batch_size: usize) -> Result<f64> {
        self.check_training_inputs(data, labels)?;
        let (tape, g) = build_graph(self, &data.to_matrix(), labels, NormMode::Ghost(virtual_batch_size));
        Ok(tape.value(g.objective).data[0])
    }

    /// Training-mode objective and its gradient with respect to every parameter
    /// tensor, in the order of [`TrainedModel::parameters`].
    pub fn objective_and_gradients(
        &self,
        data: &FeatureMatrix,
        labels: &[usize],
        virtual_batch_size: usize,
    ) -> Result<(f64, Vec<Matrix>)> {
        self.check_training_inputs(data, labels)?;
        let (tape, g) = build_graph(self, &data.to_matrix(), labels, NormMode::Ghost(virtual_batch_size));
        let value = tape.value(g.objective).data[0];
        let grads = gradients(&tape, &g, &self.params);
        Ok((value, grads))
    }

    /// Objective evaluated with frozen statistics (what inference sees).
    pub fn frozen_objective(&self, data: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
        self.check_training_inputs(data, labels)?;
        let (tape, g) = build_graph(self, &data.to_matrix(), labels, NormMode::Frozen);
        Ok(tape.value(g.objective).data[0])
    }

    /// Mean cross-entropy with frozen statistics.
    pub fn cross_entropy(&self, data: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
        self.check_training_inputs(data, labels)?;
        let (tape, g) = build_graph(self, &data.to_matrix(), labels, NormMode::Frozen);
        Ok(tape.value(g.cross_entropy).data[0])
    }

    fn check_training_inputs(&self, data: &FeatureMatrix, labels: &[usize]) -> Result<()> {
        if data.cols() != self.config.feature_count {
            return Err(TabNetError::InvalidInput(format!(
                "data has {} features, model expects {}",
                data.cols(),
                self.config.feature_count
            )));
        }
        if data.rows() != labels.len() {
            return Err(TabNetError::InvalidInput(format!(
                "{} rows but {} labels",
                data.rows(),
                labels.len()
            )));
        }
        if data.rows() == 0 {
            return Err(TabNetError::InvalidInput("no rows".into()));
        }
        check_labels(labels, self.config.n_classes)
    }
}

fn gradients(tape: &Tape, g: &Graph, params: &[Matrix]) -> Vec<Matrix> {
    let grads = tape.backward(g.objective);
    g.params
        .iter()
        .zip(params)
        .map(|(v, p)| grads[v.index()].clone().unwrap_or_else(|| Matrix::zeros(p.rows, p.cols)))
        .collect()
}

/// Trains a model and returns it.
pub fn train(
    config: ModelConfig,
    data: &FeatureMatrix,
    labels: &[usize],
    schedule: &TrainingSchedule,
) -> Result<TrainedModel> {
    train_with_report(config, data, labels, schedule).map(|(m, _)| m)
}

/// Trains a model and also returns the loss history.
pub fn train_with_report(
    config: ModelConfig,
    data: &FeatureMatrix,
    labels: &[usize],
    schedule: &TrainingSchedule,
) -> Result<(TrainedModel, TrainingReport)> {
    schedule.validate()?;
    config.validate()?;
    if data.cols() != config.feature_count {
        return Err(TabNetError::InvalidInput(format!(
            "data has {} features, config expects {}",
            data.cols(),
            config.feature_count
        )));
    }
    if labels.len() != data.rows() {
        return Err(TabNetError::InvalidInput(format!(
            "{} rows but {} labels",
            data.rows(),
            labels.len()
        )));
    }
    check_labels(labels, config.n_classes)?;
    let mut present = vec![0usize; config.n_classes];
    for &y in labels {
        present[y] += 1;
    }
    if present.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(TabNetError::Training(format!(
            "degenerate labels: need at least 2 classes present, counts per class {present:?}"
        )));
    }
    for c in 0..data.cols() {
        let col = data.column(c);
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            return Err(TabNetError::Training(format!(
                "degenerate data: column {:?} has zero variance",
                data.column_names()[c]
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    order.shuffle(&mut rng);
    let n_val = ((data.rows() as f64) * schedule.validation_fraction).round() as usize;
    let n_val = if data.rows() - n_val < 2 { 0 } else { n_val };
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_idx = train_idx.to_vec();
    let val_x = data.select_rows(val_idx);
    let val_y: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();
    let train_x_full = data.select_rows(&train_idx);
    let train_y_full: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();

    let mut model = TrainedModel::initialize(config)?;
    let initial_objective = model.frozen_objective(&train_x_full, &train_y_full)?;
    let x_all = data.to_matrix();

    let mut velocity: Vec<Matrix> = model.params.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect();
    let mut best: Option<(f64, Vec<Matrix>, Vec<NormStats>, usize)> = None;
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut epochs_run = 0;

    for epoch in 0..schedule.max_epochs {
        epochs_run = epoch + 1;
        let lr = schedule.learning_rate * schedule.lr_decay.powi((epoch / schedule.decay_every.max(1)) as i32);
        let mut epoch_order = train_idx.clone();
        epoch_order.shuffle(&mut rng);
        let mut sum_obj = 0.0;
        let mut batches = 0;
        for chunk in epoch_order.chunks(schedule.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let xb = x_all.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (tape, graph) = build_graph(&model, &xb, &yb, NormMode::Ghost(schedule.virtual_batch_size));
            sum_obj += tape.value(graph.objective).data[0];
            batches += 1;
            let mut grads = gradients(&tape, &graph, &model.params);
            if schedule.clip_norm > 0.0 {
                let norm: f64 = grads.iter().flat_map(|g| &g.data).map(|v| v * v).sum::<f64>().sqrt();
                if norm > schedule.clip_norm {
                    let s = schedule.clip_norm / norm;
                    grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|v| *v *= s));
                }
            }
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((pv, vv), gv) in p.data.iter_mut().zip(&mut v.data).zip(&g.data) {
                    *vv = schedule.momentum * *vv + gv;
                    *pv -= lr * *vv;
                }
            }
            update_running_stats(&mut model.norm_stats, &graph.stats, schedule.norm_momentum);
        }
        let train_objective = if batches > 0 { sum_obj / batches as f64 } else { f64::NAN };
        let monitor = if n_val > 0 {
            model.cross_entropy(&val_x, &val_y)?
        } else {
            model.cross_entropy(&train_x_full, &train_y_full)?
        };
        history.push(EpochRecord {
            epoch,
            train_objective,
            validation_loss: (n_val > 0).then_some(monitor),
        });
        if !monitor.is_finite() {
            return Err(TabNetError::Training(format!("loss diverged at epoch {epoch}")));
        }
        let improved = best.as_ref().map_or(true, |(b, ..)| monitor < *b - 1e-9);
        if improved {
            best = Some((monitor, model.params.clone(), model.norm_stats.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= schedule.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (_, params, stats, best_epoch) = best.expect("at least one epoch ran");
    model.params = params;
    model.norm_stats = stats;
    model.model_version = version_tag(&model);
    let final_objective = model.frozen_objective(&train_x_full, &train_y_full)?;
    Ok((
        model,
        TrainingReport {
            initial_objective,
            final_objective,
            best_epoch,
            epochs_run,
            stopped_early,
            history,
        },
    ))
}

fn update_running_stats(stats: &mut [NormStats], batch: &[(usize, Vec<ChunkStats>)], momentum: f64) {
    for (slot, chunks) in batch {
        let s = &mut stats[*slot];
        for ch in chunks {
            for (m, b) in s.mean.iter_mut().zip(&ch.mean) {
                *m = (1.0 - momentum) * *m + momentum * b;
            }
            for (v, b) in s.var.iter_mut().zip(&ch.var) {
                *v = ((1.0 - momentum) * *v + momentum * b).max(1e-12);
            }
        }
    }
}

/// Content-derived version tag: CRC-32C over the parameter bytes.
pub(crate) fn version_tag(model: &TrainedModel) -> String {
    let mut crc = 0u32;
    for p in &model.params {
        for v in &p.data {
            crc = crc32c::crc32c_append(crc, &v.to_le_bytes());
        }
    }
    format!("tabnet-{crc:08x}")
}
