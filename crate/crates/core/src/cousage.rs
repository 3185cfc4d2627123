//! Per-example gradient projections onto spectral directions, the co-usage
//! correlation matrix with its diagonal dominance, task-conditioned usage,
//! and sharedness scores.

use crate::model::{backward, forward_batch, Grads, Model, Real, Workspace};
use crate::numcore::Mat;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CousageError {
    #[error("need at least 2 inputs, got {0}")]
    TooFewInputs(usize),
    #[error("usage row is all zero")]
    ZeroUsage,
    #[error("usage values must be nonnegative")]
    NegativeUsage,
}

/// Per-example activations a_k(x): the inner product of each input's
/// single-example loss gradient (attention parameters only) with each
/// direction. Returns an inputs x directions matrix.
pub fn per_example_activation<F: Real>(
    model: &Model<F>,
    inputs: &[(u32, u32, u32)],
    task: usize,
    directions: &[Vec<f64>],
) -> Mat {
    assert!(!inputs.is_empty() && !directions.is_empty());
    let mut ws = Workspace::new(model, 1);
    let mut grads = Grads::zeros(model);
    let mut out = Mat::zeros(inputs.len(), directions.len());
    for (i, &ex) in inputs.iter().enumerate() {
        grads.zero_all();
        forward_batch(model, &mut ws, &[ex], task, true);
        backward(model, &mut ws, &[ex], task, &mut grads);
        let flat = grads.attn_flat(model);
        for (k, dir) in directions.iter().enumerate() {
            let dot: f64 =
                flat.data.iter().zip(dir).map(|(&g, &v)| g as f64 * v).sum();
            out.set(i, k, dot);
        }
    }
    out
}

/// Co-usage matrix and diagonal dominance.
#[derive(Debug, Clone)]
pub struct Cousage {
    /// Pearson correlations, symmetric with unit diagonal. Pairs involving a
    /// zero-variance direction are set to 0.
    pub matrix: Mat,
    pub zero_variance: Vec<bool>,
    /// d_k = 1 - mean |M_kj| over the neighborhood j in {k-w..k+w} \ {k},
    /// clipped to the index range.
    pub diagonal_dominance: Vec<f64>,
}

/// Default neighborhood half-width for diagonal dominance (j in k-2..=k+2).
pub const DOMINANCE_HALF_WIDTH: usize = 2;

/// Pearson co-usage of per-example activations (inputs x directions).
pub fn cousage_matrix(activations: &Mat, half_width: usize) -> Result<Cousage, CousageError> {
    let n = activations.rows();
    let m = activations.cols();
    if n < 2 {
        return Err(CousageError::TooFewInputs(n));
    }
    let mut mean = vec![0.0f64; m];
    for i in 0..n {
        for (mu, &v) in mean.iter_mut().zip(activations.row(i)) {
            *mu += v;
        }
    }
    for mu in &mut mean {
        *mu /= n as f64;
    }
    let mut var = vec![0.0f64; m];
    for i in 0..n {
        for k in 0..m {
            let c = activations.get(i, k) - mean[k];
            var[k] += c * c;
        }
    }
    let zero_variance: Vec<bool> = var.iter().map(|&v| v == 0.0).collect();

    let mut matrix = Mat::identity(m);
    for a in 0..m {
        for b in (a + 1)..m {
            let corr = if zero_variance[a] || zero_variance[b] {
                0.0
            } else {
                let mut cov = 0.0;
                for i in 0..n {
                    cov += (activations.get(i, a) - mean[a]) * (activations.get(i, b) - mean[b]);
                }
                cov / (var[a] * var[b]).sqrt()
            };
            matrix.set(a, b, corr);
            matrix.set(b, a, corr);
        }
    }

    let mut diagonal_dominance = Vec::with_capacity(m);
    for k in 0..m {
        let lo = k.saturating_sub(half_width);
        let hi = (k + half_width).min(m - 1);
        let mut acc = 0.0;
        let mut count = 0usize;
        for j in lo..=hi {
            if j != k {
                acc += matrix.get(k, j).abs();
                count += 1;
            }
        }
        diagonal_dominance.push(if count > 0 { 1.0 - acc / count as f64 } else { 1.0 });
    }
    Ok(Cousage { matrix, zero_variance, diagonal_dominance })
}

/// Task-conditioned usage U[o][k] = mean over task-o inputs of a_k(x)^2.
/// `per_task` holds one activation matrix per task over that task's inputs.
pub fn task_usage(per_task: &[Mat]) -> Mat {
    assert!(!per_task.is_empty());
    let m = per_task[0].cols();
    let mut u = Mat::zeros(per_task.len(), m);
    for (o, acts) in per_task.iter().enumerate() {
        assert_eq!(acts.cols(), m);
        let n = acts.rows() as f64;
        for i in 0..acts.rows() {
            for k in 0..m {
                let a = acts.get(i, k);
                u.set(o, k, u.get(o, k) + a * a / n);
            }
        }
    }
    u
}

/// Sharedness S = (sum_o U_o)^2 / (T * sum_o U_o^2), in [1/T, 1].
pub fn sharedness(usage_row: &[f64]) -> Result<f64, CousageError> {
    if usage_row.iter().any(|&v| v < 0.0) {
        return Err(CousageError::NegativeUsage);
    }
    let total: f64 = usage_row.iter().sum();
    let sq: f64 = usage_row.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return Err(CousageError::ZeroUsage);
    }
    Ok(total * total / (usage_row.len() as f64 * sq))
}

/// Sample up to `limit` inputs of a split deterministically (every n-th).
pub fn sample_inputs(split: &[(u32, u32, u32)], limit: usize) -> Vec<(u32, u32, u32)> {
    if split.len() <= limit {
        return split.to_vec();
    }
    let stride = split.len() as f64 / limit as f64;
    (0..limit).map(|i| split[(i as f64 * stride) as usize]).collect()
}

/// Per-direction co-usage summary used by reports: sigma_k * d_k is the
/// coactivation-corrected importance column.
#[derive(Debug, Clone)]
pub struct UsageProfile {
    pub direction: usize,
    pub above_edge: bool,
    pub sigma: f64,
    pub diagonal_dominance: f64,
    pub per_task_usage: Vec<f64>,
    pub sharedness: Option<f64>,
}
