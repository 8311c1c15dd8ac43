//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Only the operations the TabNet training graph needs are provided. Every node
//! stores its forward value; `backward` walks the tape in reverse and
//! accumulates gradients into the inputs.

use crate::matrix::Matrix;
use crate::sparsemax::{sparsemax_backward, sparsemax_into};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const ENTROPY_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-chunk batch statistics produced by a ghost batch-norm node.
#[derive(Debug, Clone)]
pub(crate) struct ChunkStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running-statistic updates.
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Relu(Var),
    Glu(Var),
    SliceCols(Var, usize, usize),
    SparsemaxRows(Var),
    PriorUpdate { prior: Var, mask: Var, gamma: f64 },
    GhostBatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        chunks: Vec<(usize, usize)>,
        xhat: Matrix,
        inv_std: Vec<Vec<f64>>,
    },
    FrozenNorm { x: Var, gamma: Var, beta: Var, inv_std: Vec<f64>, xhat: Matrix },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Matrix },
    MaskEntropy(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub(crate) struct Tape {
    nodes: Vec<Node>,
}

/// Splits `n` rows into `ceil(n / size)` contiguous chunks whose sizes differ by at most one.
pub(crate) fn ghost_chunks(n: usize, size: usize) -> Vec<(usize, usize)> {
    let size = size.max(1);
    let count = n.div_ceil(size).max(1);
    let base = n / count;
    let extra = n % count;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for i in 0..count {
        let len = base + usize::from(i < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias).clone();
        let mut v = self.value(x).clone();
        for r in 0..v.rows {
            for (o, bb) in v.row_mut(r).iter_mut().zip(&b.data) {
                *o += bb;
            }
        }
        self.push(v, Op::AddBias(x, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn glu(&mut self, a: Var) -> Var {
        let v = glu_forward(self.value(a));
        self.push(v, Op::Glu(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_cols(start, end);
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn sparsemax_rows(&mut self, a: Var) -> Var {
        let z = self.value(a);
        let mut out = Matrix::zeros(z.rows, z.cols);
        let mut scratch = Vec::with_capacity(z.cols);
        for r in 0..z.rows {
            sparsemax_into(z.row(r), out.row_mut(r), &mut scratch);
        }
        self.push(out, Op::SparsemaxRows(a))
    }

    pub fn prior_update(&mut self, prior: Var, mask: Var, gamma: f64) -> Var {
        let v = self
            .value(prior)
            .zip_map(self.value(mask), |p, m| prior_update_value(p, m, gamma));
        self.push(v, Op::PriorUpdate { prior, mask, gamma })
    }

    /// Batch norm over row chunks (ghost batches). Returns the output and the
    /// statistics of each chunk.
    pub fn ghost_batch_norm(&mut self, x: Var, gamma: Var, beta: Var, ghost: usize) -> (Var, Vec<ChunkStats>) {
        let xv = self.value(x);
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let cols = xv.cols;
        let chunks = ghost_chunks(xv.rows, ghost);
        let mut xhat = Matrix::zeros(xv.rows, cols);
        let mut out = Matrix::zeros(xv.rows, cols);
        let mut inv_stds = Vec::with_capacity(chunks.len());
        let mut stats = Vec::with_capacity(chunks.len());
        for &(s, e) in &chunks {
            let m = (e - s) as f64;
            let mut mean = vec![0.0; cols];
            for r in s..e {
                for (acc, v) in mean.iter_mut().zip(xv.row(r)) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            let mut var = vec![0.0; cols];
            for r in s..e {
                for ((acc, v), mu) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                    *acc += (v - mu) * (v - mu);
                }
            }
            let biased: Vec<f64> = var.iter().map(|v| v / m).collect();
            let unbiased: Vec<f64> = if m > 1.0 {
                var.iter().map(|v| v / (m - 1.0)).collect()
            } else {
                biased.clone()
            };
            let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            for r in s..e {
                for c in 0..cols {
                    let h = (xv.get(r, c) - mean[c]) * inv_std[c];
                    xhat.set(r, c, h);
                    out.set(r, c, h * g[c] + b[c]);
                }
            }
            inv_stds.push(inv_std);
            stats.push(ChunkStats { mean, var: unbiased });
        }
        let var = self.push(
            out,
            Op::GhostBatchNorm {
                x,
                gamma,
                beta,
                chunks,
                xhat,
                inv_std: inv_stds,
            },
        );
        (var, stats)
    }

    /// Normalization with fixed statistics (inference-mode batch norm).
    pub fn frozen_norm(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64]) -> Var {
        let xv = self.value(x);
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Matrix::zeros(xv.rows, xv.cols);
        let mut out = Matrix::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            for c in 0..xv.cols {
                let h = (xv.get(r, c) - mean[c]) * inv_std[c];
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        self.push(out, Op::FrozenNorm { x, gamma, beta, inv_std, xhat })
    }

    /// Mean softmax cross-entropy over rows; a 1×1 node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let z = self.value(logits);
        let mut probs = Matrix::zeros(z.rows, z.cols);
        let mut loss = 0.0;
        for r in 0..z.rows {
            softmax_into(z.row(r), probs.row_mut(r));
            loss -= probs.get(r, labels[r]).max(1e-300).ln();
        }
        loss /= z.rows as f64;
        self.push(
            Matrix::filled(1, 1, loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Mean over rows of `Σ_j −m_j ln(m_j + ε)`; a 1×1 node.
    pub fn mask_entropy(&mut self, m: Var) -> Var {
        let mv = self.value(m);
        let total: f64 = mv.data.iter().map(|&p| -p * (p + ENTROPY_EPS).ln()).sum();
        let v = total / mv.rows as f64;
        self.push(Matrix::filled(1, 1, v), Op::MaskEntropy(m))
    }

    /// Reverse pass from a 1×1 output. Returns a gradient slot per node.
    pub fn backward(&self, output: Var) -> Vec<Option<Matrix>> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBias(x, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (acc, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|v| v * c));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Glu(a) => {
                    let z = self.value(*a);
                    let h = z.cols / 2;
                    let mut ga = Matrix::zeros(z.rows, z.cols);
                    for r in 0..z.rows {
                        for c in 0..h {
                            let lin = z.get(r, c);
                            let s = sigmoid(z.get(r, c + h));
                            let up = g.get(r, c);
                            ga.set(r, c, up * s);
                            ga.set(r, c + h, up * lin * s * (1.0 - s));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start, end) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows, src.cols);
                    for r in 0..src.rows {
                        ga.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SparsemaxRows(a) => {
                    let p = &node.value;
                    let mut ga = Matrix::zeros(p.rows, p.cols);
                    for r in 0..p.rows {
                        sparsemax_backward(p.row(r), g.row(r), ga.row_mut(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::PriorUpdate { prior, mask, gamma } => {
                    let pv = self.value(*prior);
                    let mv = self.value(*mask);
                    let mut gp = Matrix::zeros(pv.rows, pv.cols);
                    let mut gm = Matrix::zeros(pv.rows, pv.cols);
                    for k in 0..pv.data.len() {
                        let (p, m) = (pv.data[k], mv.data[k]);
                        if p * (gamma - m) < *gamma {
                            gp.data[k] = g.data[k] * (gamma - m);
                            gm.data[k] = -g.data[k] * p;
                        }
                    }
                    accumulate(&mut grads, *prior, gp);
                    accumulate(&mut grads, *mask, gm);
                }
                Op::GhostBatchNorm {
                    x,
                    gamma,
                    beta,
                    chunks,
                    xhat,
                    inv_std,
                } => {
                    let gam = &self.value(*gamma).data;
                    let cols = g.cols;
                    let mut gx = Matrix::zeros(g.rows, cols);
                    let mut ggamma = Matrix::zeros(1, cols);
                    let mut gbeta = Matrix::zeros(1, cols);
                    for (ci, &(s, e)) in chunks.iter().enumerate() {
                        let m = (e - s) as f64;
                        let mut sum_dxhat = vec![0.0; cols];
                        let mut sum_dxhat_xhat = vec![0.0; cols];
                        for r in s..e {
                            for c in 0..cols {
                                let gy = g.get(r, c);
                                ggamma.data[c] += gy * xhat.get(r, c);
                                gbeta.data[c] += gy;
                                let dxh = gy * gam[c];
                                sum_dxhat[c] += dxh;
                                sum_dxhat_xhat[c] += dxh * xhat.get(r, c);
                            }
                        }
                        for r in s..e {
                            for c in 0..cols {
                                let dxh = g.get(r, c) * gam[c];
                                let v = inv_std[ci][c] / m
                                    * (m * dxh - sum_dxhat[c] - xhat.get(r, c) * sum_dxhat_xhat[c]);
                                gx.set(r, c, v);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::FrozenNorm {
                    x,
                    gamma,
                    beta,
                    inv_std,
                    xhat,
                } => {
                    let gam = &self.value(*gamma).data;
                    let cols = g.cols;
                    let mut gx = Matrix::zeros(g.rows, cols);
                    let mut ggamma = Matrix::zeros(1, cols);
                    let mut gbeta = Matrix::zeros(1, cols);
                    for r in 0..g.rows {
                        for c in 0..cols {
                            let gy = g.get(r, c);
                            ggamma.data[c] += gy * xhat.get(r, c);
                            gbeta.data[c] += gy;
                            gx.set(r, c, gy * gam[c] * inv_std[c]);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let scale = g.data[0] / probs.rows as f64;
                    let mut gz = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        let v = gz.get(r, y) - 1.0;
                        gz.set(r, y, v);
                    }
                    gz.data.iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut grads, *logits, gz);
                }
                Op::MaskEntropy(m) => {
                    let mv = self.value(*m);
                    let scale = g.data[0] / mv.rows as f64;
                    let gm = mv.map(|p| -scale * ((p + ENTROPY_EPS).ln() + p / (p + ENTROPY_EPS)));
                    accumulate(&mut grads, *m, gm);
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn glu_forward(z: &Matrix) -> Matrix {
    let h = z.cols / 2;
    let mut out = Matrix::zeros(z.rows, h);
    for r in 0..z.rows {
        let row = z.row(r);
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = row[c] * sigmoid(row[c + h]);
        }
    }
    out
}

/// `min(gamma, prior · (gamma − mask))`.
#[inline]
pub(crate) fn prior_update_value(prior: f64, mask: f64, gamma: f64) -> f64 {
    (prior * (gamma - mask)).min(gamma)
}

pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}
