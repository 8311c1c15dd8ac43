//! Sparsemax: Euclidean projection onto the probability simplex.
//!
//! For scores `z`, sort descending as `z_(1) ≥ … ≥ z_(n)`, pick the support size
//! `k = max { j : 1 + j·z_(j) > Σ_{i≤j} z_(i) }`, set the threshold
//! `τ = (Σ_{i≤k} z_(i) − 1) / k`, and clip `p_i = max(z_i − τ, 0)`.
//! Unlike softmax the result has exact zeros, which is what makes the feature
//! masks readable.

use crate::error::{Result, TabNetError};

/// Projects `logits` onto the probability simplex.
pub fn sparsemax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(TabNetError::InvalidInput("sparsemax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(TabNetError::InvalidInput("sparsemax input must be finite".into()));
    }
    let mut out = vec![0.0; logits.len()];
    let mut scratch = Vec::with_capacity(logits.len());
    sparsemax_into(logits, &mut out, &mut scratch);
    Ok(out)
}

/// Threshold `τ` for a finite, non-empty score vector.
pub(crate) fn threshold(z: &[f64], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend_from_slice(z);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut support_sum = scratch[0];
    let mut k = 1usize;
    for (j, &v) in scratch.iter().enumerate() {
        cumsum += v;
        let j1 = (j + 1) as f64;
        if 1.0 + j1 * v > cumsum {
            k = j + 1;
            support_sum = cumsum;
        }
    }
    (support_sum - 1.0) / k as f64
}

/// Unchecked in-place variant used on the hot path. `z` must be finite and non-empty.
pub(crate) fn sparsemax_into(z: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    let tau = threshold(z, scratch);
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - tau).max(0.0);
    }
}

/// Vector-Jacobian product of sparsemax given its output `p` and upstream gradient `g`:
/// on the support `S`, `∂L/∂z_i = g_i − mean_{j∈S} g_j`; zero elsewhere.
pub(crate) fn sparsemax_backward(p: &[f64], g: &[f64], out: &mut [f64]) {
    let mut support = 0usize;
    let mut acc = 0.0;
    for (&pi, &gi) in p.iter().zip(g) {
        if pi > 0.0 {
            support += 1;
            acc += gi;
        }
    }
    let mean = if support > 0 { acc / support as f64 } else { 0.0 };
    for ((o, &pi), &gi) in out.iter_mut().zip(p).zip(g) {
        *o = if pi > 0.0 { gi - mean } else { 0.0 };
    }
}
