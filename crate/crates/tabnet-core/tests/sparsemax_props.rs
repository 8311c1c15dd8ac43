use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabnet_core::sparsemax;

/// Exact projection by enumerating every candidate support. For a support `S`
/// the simplex-constrained minimizer restricted to `S` is `z_S − τ` with
/// `τ = (Σ_S z − 1)/|S|`; the projection is the feasible candidate closest to `z`.
fn projection_by_enumeration(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for bits in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| bits & (1 << i) != 0).collect();
        let tau = (support.iter().map(|&i| z[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let mut p = vec![0.0; n];
        let mut feasible = true;
        for &i in &support {
            p[i] = z[i] - tau;
            if p[i] < 0.0 {
                feasible = false;
            }
        }
        if !feasible {
            continue;
        }
        let dist: f64 = p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().map_or(true, |(d, _)| dist < *d) {
            best = Some((dist, p));
        }
    }
    best.unwrap().1
}

/// Coarse grid search over the 2-simplex, minimizing `‖p − z‖²`.
fn grid_projection_3(z: &[f64; 3], steps: usize) -> [f64; 3] {
    let mut best = (f64::INFINITY, [0.0; 3]);
    for i in 0..=steps {
        for j in 0..=(steps - i) {
            let p = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
            let d: f64 = p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, p);
            }
        }
    }
    best.1
}

#[test]
fn dominant_example_matches_grid_oracle() {
    let z = [2.0, 1.0, 0.1];
    let grid = grid_projection_3(&z, 400);
    assert_eq!(grid, [1.0, 0.0, 0.0]);
    assert_eq!(sparsemax(&z).unwrap(), grid.to_vec());
}

#[test]
fn agrees_with_support_enumeration_on_random_5_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fast = sparsemax(&z).unwrap();
        let slow = projection_by_enumeration(&z);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-8, "max deviation {worst}");
}

#[test]
fn simplex_property_on_many_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100_000 {
        let n = rng.gen_range(1..=64);
        let scale = [0.01, 1.0, 100.0][rng.gen_range(0..3)];
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let p = sparsemax(&z).unwrap();
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn output_is_on_simplex(z in prop::collection::vec(-50.0f64..50.0, 1..=64)) {
        let p = sparsemax(&z).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn shift_invariant(z in prop::collection::vec(-10.0f64..10.0, 1..=64), c in -100.0f64..100.0) {
        let p = sparsemax(&z).unwrap();
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let q = sparsemax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn preserves_order(z in prop::collection::vec(-5.0f64..5.0, 2..=16)) {
        let p = sparsemax(&z).unwrap();
        for i in 0..z.len() {
            for j in 0..z.len() {
                if z[i] > z[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }
}
