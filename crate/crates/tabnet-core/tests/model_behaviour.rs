use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabnet_core::{
    load_model, metrics, save_model, train, train_with_report, FeatureMatrix, ModelConfig, TrainedModel,
    TrainingSchedule,
};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    FeatureMatrix::from_rows(&data).unwrap()
}

/// Small trained model so masks are not at their initial values.
fn trained_model(features: usize, seed: u64) -> (TrainedModel, FeatureMatrix) {
    let x = random_matrix(300, features, seed);
    let y: Vec<usize> = (0..x.rows()).map(|r| usize::from(x.row(r)[0] - 0.5 * x.row(r)[1] > 0.0)).collect();
    let sched = TrainingSchedule {
        max_epochs: 15,
        seed,
        ..Default::default()
    };
    let model = train(ModelConfig::new(features, 2).with_seed(seed), &x, &y, &sched).unwrap();
    (model, x)
}

#[test]
fn sample_output_is_independent_of_batch_composition() {
    let (model, _) = trained_model(6, 1);
    let big = random_matrix(1000, 6, 99);
    let all = model.forward(&big).unwrap();
    for &r in &[0usize, 17, 500, 999] {
        let single = model.forward(&big.select_rows(&[r])).unwrap();
        assert_eq!(single[0], all[r], "row {r} differs between batch sizes 1 and 1000");
        // bitwise, not just approximately
        for (a, b) in single[0].probabilities.iter().zip(&all[r].probabilities) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn outputs_satisfy_contracts() {
    let (model, x) = trained_model(6, 2);
    for out in model.forward(&x).unwrap() {
        let ps: f64 = out.probabilities.iter().sum();
        assert!((ps - 1.0).abs() < 1e-9);
        assert!(out.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(out.predicted_class, tabnet_core::argmax(&out.probabilities));
        assert_eq!(out.explanation.step_masks.len(), 3);
        for mask in &out.explanation.step_masks {
            assert!(mask.iter().all(|&m| m >= 0.0));
            assert!((mask.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let imp = &out.explanation.aggregate_importance;
        assert!(imp.iter().all(|&v| v >= 0.0));
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn prior_is_non_increasing_with_gamma_one() {
    let mut cfg = ModelConfig::new(7, 2).with_seed(5);
    cfg.gamma = 1.0;
    cfg.n_steps = 5;
    let model = TrainedModel::initialize(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let state: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut prior = vec![1.0; 7];
        for step in 0..5 {
            let (mask, next) = model.attentive_step(&state, &prior, step).unwrap();
            for j in 0..7 {
                assert!(next[j] <= prior[j]);
                assert!(next[j] >= 0.0);
                if mask[j] == 1.0 {
                    assert_eq!(next[j], 0.0);
                }
                if mask[j] == 0.0 {
                    assert_eq!(next[j], prior[j]);
                }
            }
            prior = next;
        }
    }
}

#[test]
fn prior_update_matches_direct_recomputation() {
    let cfg = ModelConfig::new(6, 2).with_seed(8);
    let gamma = cfg.gamma;
    let model = TrainedModel::initialize(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let state: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Keep the prior where the product stays below gamma so no clipping occurs.
        let prior: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (mask, next) = model.attentive_step(&state, &prior, 1).unwrap();
        for j in 0..6 {
            let oracle = prior[j] * (gamma - mask[j]);
            assert_eq!(next[j].to_bits(), oracle.to_bits());
            assert!((0.0..=gamma).contains(&next[j]));
        }
    }
}

#[test]
fn prior_stays_within_gamma_bound() {
    let model = TrainedModel::initialize(ModelConfig::new(4, 2).with_seed(1)).unwrap();
    let gamma = model.config().gamma;
    let state = vec![0.0; 8];
    let mut prior = vec![gamma; 4];
    for step in 0..3 {
        let (_, next) = model.attentive_step(&state, &prior, step).unwrap();
        assert!(next.iter().all(|p| (0.0..=gamma).contains(p)));
        prior = next;
    }
}

/// Finite-difference check of the full training objective (ghost-batch norm,
/// gated blocks, sparsemax masks, prior updates, entropy penalty).
#[test]
fn gradients_match_central_differences() {
    let x = random_matrix(10, 4, 42);
    let y = vec![0, 1, 1, 0, 1, 0, 0, 1, 1, 0];
    let mut cfg = ModelConfig::new(4, 2).with_seed(9);
    cfg.lambda_sparse = 0.1;
    let model = TrainedModel::initialize(cfg).unwrap();
    let (_, grads) = model.objective_and_gradients(&x, &y, 128).unwrap();
    let support = |m: &TrainedModel| -> Vec<Vec<bool>> {
        m.forward(&x)
            .unwrap()
            .iter()
            .flat_map(|o| o.explanation.step_masks.iter().map(|r| r.iter().map(|&v| v > 0.0).collect()))
            .collect()
    };
    let h = 1e-6;
    let mut checked = 0;
    let mut worst = 0.0f64;
    let n_tensors = grads.len();
    for t in 0..n_tensors {
        let len = grads[t].data.len();
        for k in 0..len {
            let mut plus = model.clone();
            plus.parameters_mut()[t].data[k] += h;
            let mut minus = model.clone();
            minus.parameters_mut()[t].data[k] -= h;
            // Skip coordinates where the perturbation changes a sparsemax support (non-smooth point).
            if support(&plus) != support(&minus) {
                continue;
            }
            let fp = plus.objective(&x, &y, 128).unwrap();
            let fm = minus.objective(&x, &y, 128).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let an = grads[t].data[k];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            let rel = (fd - an).abs() / denom;
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(checked > 500, "only {checked} coordinates checked");
    assert!(worst < 1e-4, "worst relative error {worst}");
}

fn logistic_regression_train_accuracy(x: &FeatureMatrix, y: &[usize]) -> f64 {
    let mut w = vec![0.0; x.cols()];
    let mut b = 0.0;
    for _ in 0..2000 {
        let mut gw = vec![0.0; x.cols()];
        let mut gb = 0.0;
        for r in 0..x.rows() {
            let z: f64 = x.row(r).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let e = p - y[r] as f64;
            for (g, v) in gw.iter_mut().zip(x.row(r)) {
                *g += e * v;
            }
            gb += e;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= 0.5 * g / x.rows() as f64;
        }
        b -= 0.5 * gb / x.rows() as f64;
    }
    let pred: Vec<usize> = (0..x.rows())
        .map(|r| usize::from(x.row(r).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b > 0.0))
        .collect();
    metrics::accuracy(&pred, y)
}

fn separable_toy(n: usize, seed: u64) -> (FeatureMatrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    while rows.len() < n {
        let a: f64 = rng.gen_range(-2.0..2.0);
        let b: f64 = rng.gen_range(-2.0..2.0);
        let margin = a + 0.5 * b;
        if margin.abs() < 0.2 {
            continue;
        }
        rows.push(vec![a, b]);
        y.push(usize::from(margin > 0.0));
    }
    (FeatureMatrix::from_rows(&rows).unwrap(), y)
}

#[test]
fn separable_toy_reaches_logistic_oracle() {
    let (x, y) = separable_toy(200, 4);
    assert_eq!(logistic_regression_train_accuracy(&x, &y), 1.0);
    let sched = TrainingSchedule {
        max_epochs: 200,
        batch_size: 64,
        validation_fraction: 0.0,
        patience: 200,
        learning_rate: 0.05,
        seed: 4,
        ..Default::default()
    };
    let (model, report) = train_with_report(ModelConfig::new(2, 2).with_seed(4), &x, &y, &sched).unwrap();
    let pred: Vec<usize> = model.forward(&x).unwrap().iter().map(|o| o.predicted_class).collect();
    let acc = metrics::accuracy(&pred, &y);
    assert!(acc >= 0.99, "train accuracy {acc}");
    assert!(report.final_objective < report.initial_objective);
    assert!(report.epochs_run <= 200);
}

fn zero_mask_fraction(model: &TrainedModel, x: &FeatureMatrix) -> f64 {
    let outs = model.forward(x).unwrap();
    let mut zeros = 0usize;
    let mut total = 0usize;
    for o in &outs {
        for m in &o.explanation.step_masks {
            zeros += m.iter().filter(|&&v| v == 0.0).count();
            total += m.len();
        }
    }
    zeros as f64 / total as f64
}

#[test]
fn strong_sparsity_penalty_gives_sparser_masks() {
    let x = random_matrix(400, 8, 77);
    let y: Vec<usize> = (0..x.rows())
        .map(|r| usize::from(x.row(r)[0] + x.row(r)[3] - x.row(r)[5] > 0.0))
        .collect();
    let sched = TrainingSchedule {
        max_epochs: 40,
        seed: 3,
        ..Default::default()
    };
    let mut dense_cfg = ModelConfig::new(8, 2).with_seed(3);
    dense_cfg.lambda_sparse = 0.0;
    let mut sparse_cfg = dense_cfg.clone();
    sparse_cfg.lambda_sparse = 10.0;
    let dense = train(dense_cfg, &x, &y, &sched).unwrap();
    let sparse = train(sparse_cfg, &x, &y, &sched).unwrap();
    let (zd, zs) = (zero_mask_fraction(&dense, &x), zero_mask_fraction(&sparse, &x));
    assert!(zs > zd, "lambda=10 zero fraction {zs} should exceed lambda=0 fraction {zd}");
}

#[test]
fn save_load_preserves_forward_bitwise() {
    let (model, x) = trained_model(5, 6);
    let back = load_model(&save_model(&model)).unwrap();
    assert_eq!(back.model_version(), model.model_version());
    assert_eq!(model.forward(&x).unwrap(), back.forward(&x).unwrap());
}

#[test]
fn unfrozen_normalization_breaks_invariance() {
    let (model, x) = trained_model(5, 7);
    let control = model.with_unfrozen_normalization();
    let all = control.forward(&x.select_rows(&(0..64).collect::<Vec<_>>())).unwrap();
    let one = control.forward(&x.select_rows(&[3, 4])).unwrap();
    assert_ne!(all[3], one[0]);
}
