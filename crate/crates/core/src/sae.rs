//! TopK sparse autoencoder over the post-grok residual stream, feature-impact
//! rankings for parameter directions, and the Jaccard null machinery
//! (combinatorial expectation, random-direction null, angle-matched null).

use crate::model::gemm::{matmul_xt_dy, matmul_xw, transpose_into};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SaeError {
    #[error("need at least {0} residual rows, got {1}")]
    TooFewRows(usize, usize),
    #[error("training diverged at step {0}")]
    Diverged(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy)]
pub struct SaeConfig {
    pub d_sae: usize,
    pub k: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        SaeConfig { d_sae: 512, k: 32, steps: 10_000, batch: 256, lr: 1e-3, seed: 0 }
    }
}

/// Trained TopK autoencoder. The decoder dictionary is stored row-wise: row
/// j is feature j's unit-norm output direction.
#[derive(Debug, Clone)]
pub struct SaeModel {
    pub d_in: usize,
    pub d_sae: usize,
    pub k: usize,
    /// Input mean offset (subtracted before encoding, added after decoding).
    pub mean: Vec<f32>,
    /// d_in x d_sae, row-major.
    pub w_enc: Vec<f32>,
    pub b_enc: Vec<f32>,
    /// d_sae x d_in, row-major; rows unit norm.
    pub w_dec: Vec<f32>,
    /// Relative reconstruction error on the training set after training.
    pub final_rel_err: f64,
}

impl SaeModel {
    /// Encoder pre-activations for one centered input.
    pub fn encode_pre(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.d_in);
        debug_assert_eq!(out.len(), self.d_sae);
        out.fill(0.0);
        for (i, (&xv, &mv)) in x.iter().zip(&self.mean).enumerate() {
            let c = xv - mv;
            if c == 0.0 {
                continue;
            }
            let wrow = &self.w_enc[i * self.d_sae..(i + 1) * self.d_sae];
            for (o, &w) in out.iter_mut().zip(wrow) {
                *o += c * w;
            }
        }
        for (o, &b) in out.iter_mut().zip(&self.b_enc) {
            *o += b;
        }
    }

    /// Indices of the k largest pre-activations by value; ties break toward
    /// the smaller index.
    pub fn topk_indices(&self, pre: &[f32]) -> Vec<usize> {
        top_n_by_value(pre, self.k)
    }

    /// Sparse forward pass: returns the reconstruction and the active set.
    pub fn forward(&self, x: &[f32]) -> (Vec<f32>, Vec<usize>) {
        let mut pre = vec![0.0f32; self.d_sae];
        self.encode_pre(x, &mut pre);
        let active = self.topk_indices(&pre);
        let mut xhat = self.mean.clone();
        for &j in &active {
            let z = pre[j];
            let row = &self.w_dec[j * self.d_in..(j + 1) * self.d_in];
            for (o, &w) in xhat.iter_mut().zip(row) {
                *o += z * w;
            }
        }
        (xhat, active)
    }
}

/// Largest-n indices by value, ties toward smaller index.
pub fn top_n_by_value(values: &[f32], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b))
    });
    idx.truncate(n);
    idx
}

/// Train a TopK autoencoder on residual rows (n x d_in, row-major) by Adam
/// on the masked mean-squared reconstruction error. Decoder rows are
/// renormalized to unit length after every step.
pub fn train_sae(residuals: &[f32], d_in: usize, cfg: &SaeConfig) -> Result<SaeModel, SaeError> {
    let n = residuals.len() / d_in;
    if n < cfg.d_sae {
        return Err(SaeError::TooFewRows(cfg.d_sae, n));
    }
    if residuals.len() != n * d_in {
        return Err(SaeError::Shape(format!("{} not divisible by {d_in}", residuals.len())));
    }
    let d_sae = cfg.d_sae;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut mean = vec![0.0f32; d_in];
    for row in residuals.chunks_exact(d_in) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f32;
    }

    // Decoder rows random unit; encoder starts as the decoder transpose.
    let mut w_dec = vec![0.0f32; d_sae * d_in];
    for row in w_dec.chunks_exact_mut(d_in) {
        let mut norm = 0.0f64;
        for v in row.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v = g as f32;
            norm += g * g;
        }
        let inv = (norm.sqrt() as f32).recip();
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    let mut w_enc = vec![0.0f32; d_in * d_sae];
    transpose_into(&w_dec, &mut w_enc, d_sae, d_in);
    let mut b_enc = vec![0.0f32; d_sae];

    // Adam state.
    let mut m_state = vec![vec![0.0f32; w_enc.len()], vec![0.0f32; b_enc.len()], vec![0.0f32; w_dec.len()]];
    let mut v_state = m_state.clone();
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8f64);

    let b = cfg.batch.min(n);
    let mut xb = vec![0.0f32; b * d_in]; // centered batch
    let mut pre = vec![0.0f32; b * d_sae];
    let mut z = vec![0.0f32; b * d_sae];
    let mut xhat = vec![0.0f32; b * d_in]; // centered reconstruction
    let mut dxhat = vec![0.0f32; b * d_in];
    let mut dz = vec![0.0f32; b * d_sae];
    let mut wt = vec![0.0f32; d_sae * d_in];
    let mut g_enc = vec![0.0f32; w_enc.len()];
    let mut g_benc = vec![0.0f32; b_enc.len()];
    let mut g_dec = vec![0.0f32; w_dec.len()];

    for step in 1..=cfg.steps {
        // Stateless seeded batch selection.
        let key = cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut brng = ChaCha8Rng::seed_from_u64(key);
        for i in 0..b {
            let r = brng.gen_range(0..n);
            for j in 0..d_in {
                xb[i * d_in + j] = residuals[r * d_in + j] - mean[j];
            }
        }

        matmul_xw(&xb, &w_enc, &mut pre, b, d_in, d_sae);
        for i in 0..b {
            let row = &mut pre[i * d_sae..(i + 1) * d_sae];
            for (p, &bv) in row.iter_mut().zip(&b_enc) {
                *p += bv;
            }
        }
        z.fill(0.0);
        for i in 0..b {
            let prow = &pre[i * d_sae..(i + 1) * d_sae];
            for &j in &top_n_by_value(prow, cfg.k) {
                z[i * d_sae + j] = prow[j];
            }
        }
        matmul_xw(&z, &w_dec, &mut xhat, b, d_sae, d_in);

        let mut loss = 0.0f64;
        for i in 0..b * d_in {
            let r = xhat[i] - xb[i];
            dxhat[i] = 2.0 * r / b as f32;
            loss += (r * r) as f64;
        }
        if !loss.is_finite() {
            return Err(SaeError::Diverged(step));
        }

        // Backward: gradient flows only through the active units.
        g_dec.fill(0.0);
        matmul_xt_dy(&z, &dxhat, &mut g_dec, b, d_sae, d_in);
        transpose_into(&w_dec, &mut wt, d_sae, d_in);
        matmul_xw(&dxhat, &wt, &mut dz, b, d_in, d_sae);
        for i in 0..b * d_sae {
            if z[i] == 0.0 {
                dz[i] = 0.0;
            }
        }
        g_enc.fill(0.0);
        matmul_xt_dy(&xb, &dz, &mut g_enc, b, d_in, d_sae);
        g_benc.fill(0.0);
        for i in 0..b {
            for (gb, &d) in g_benc.iter_mut().zip(&dz[i * d_sae..(i + 1) * d_sae]) {
                *gb += d;
            }
        }

        // Adam update over the three tensors.
        let bc1 = 1.0 / (1.0 - beta1.powi(step as i32));
        let bc2 = 1.0 / (1.0 - beta2.powi(step as i32));
        for (t, (theta, grad)) in [
            (&mut w_enc, &g_enc),
            (&mut b_enc, &g_benc),
            (&mut w_dec, &g_dec),
        ]
        .into_iter()
        .enumerate()
        {
            let ms = &mut m_state[t];
            let vs = &mut v_state[t];
            for j in 0..theta.len() {
                let g = grad[j] as f64;
                ms[j] = (beta1 * ms[j] as f64 + (1.0 - beta1) * g) as f32;
                vs[j] = (beta2 * vs[j] as f64 + (1.0 - beta2) * g * g) as f32;
                let mhat = ms[j] as f64 * bc1;
                let vhat = vs[j] as f64 * bc2;
                theta[j] -= (cfg.lr * mhat / (vhat.sqrt() + eps)) as f32;
            }
        }

        // Keep dictionary rows unit norm.
        for row in w_dec.chunks_exact_mut(d_in) {
            let norm: f64 = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            if norm > 0.0 {
                let inv = (1.0 / norm) as f32;
                for v in row.iter_mut() {
                    *v *= inv;
                }
            }
        }
    }

    let mut model = SaeModel {
        d_in,
        d_sae,
        k: cfg.k,
        mean,
        w_enc,
        b_enc,
        w_dec,
        final_rel_err: 0.0,
    };
    // Relative reconstruction error over the full training set.
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for row in residuals.chunks_exact(d_in) {
        let (xhat, _) = model.forward(row);
        for j in 0..d_in {
            let r = (xhat[j] - row[j]) as f64;
            num += r * r;
            let c = (row[j] - model.mean[j]) as f64;
            den += c * c;
        }
    }
    model.final_rel_err = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    Ok(model)
}

/// Mean absolute change of each feature's pre-activation between base and
/// perturbed residual rows; returns the `top_n` most-affected indices.
pub fn feature_impact(
    sae: &SaeModel,
    base_rows: &[f32],
    perturbed_rows: &[f32],
    top_n: usize,
) -> Vec<usize> {
    assert_eq!(base_rows.len(), perturbed_rows.len());
    let d = sae.d_in;
    let n = base_rows.len() / d;
    let mut impact = vec![0.0f32; sae.d_sae];
    let mut pre_a = vec![0.0f32; sae.d_sae];
    let mut pre_b = vec![0.0f32; sae.d_sae];
    for i in 0..n {
        sae.encode_pre(&base_rows[i * d..(i + 1) * d], &mut pre_a);
        sae.encode_pre(&perturbed_rows[i * d..(i + 1) * d], &mut pre_b);
        for (acc, (a, b)) in impact.iter_mut().zip(pre_a.iter().zip(&pre_b)) {
            *acc += (b - a).abs();
        }
    }
    top_n_by_value(&impact, top_n)
}

/// Jaccard overlap |A n B| / |A u B|; two empty sets count as identical.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::HashSet;
    let sa: HashSet<usize> = a.iter().copied().collect();
    let sb: HashSet<usize> = b.iter().copied().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Closed-form expected Jaccard for two independent uniform n-subsets of a
/// d-element universe, через the hypergeometric expectation of the
/// intersection: E|A n B| = n^2/d, J ~= E/(2n - E).
pub fn combinatorial_expected_jaccard(n: usize, d: usize) -> f64 {
    let e = (n * n) as f64 / d as f64;
    e / (2.0 * n as f64 - e)
}

/// Three unit vectors with exact pairwise angle `angle_deg`, built from an
/// orthonormal random basis and the Cholesky factor of the target Gram.
pub fn angle_matched_triple(
    dim: usize,
    angle_deg: f64,
    rng: &mut ChaCha8Rng,
) -> [Vec<f32>; 3] {
    let c = angle_deg.to_radians().cos();
    // Orthonormal basis q0, q1, q2 from random Gaussians.
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < 3 {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for prev in &q {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, &p) in v.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for x in &mut v {
                *x /= norm;
            }
            q.push(v);
        }
    }
    // Cholesky of [[1,c,c],[c,1,c],[c,c,1]].
    let l10 = c;
    let l11 = (1.0 - c * c).sqrt();
    let l20 = c;
    let l21 = (c - c * c) / l11;
    let l22 = (1.0 - l20 * l20 - l21 * l21).sqrt();
    let coeffs = [[1.0, 0.0, 0.0], [l10, l11, 0.0], [l20, l21, l22]];
    coeffs.map(|row| {
        (0..dim)
            .map(|i| (row[0] * q[0][i] + row[1] * q[1][i] + row[2] * q[2][i]) as f32)
            .collect()
    })
}

/// One-sided p-value: the fraction of null statistics at least as large as
/// the observed one.
pub fn p_value_geq(null: &[f64], observed: f64) -> f64 {
    if null.is_empty() {
        return 1.0;
    }
    null.iter().filter(|&&v| v >= observed).count() as f64 / null.len() as f64
}

/// Aggregated null-model report for one run.
#[derive(Debug, Clone)]
pub struct NullReport {
    /// Pairwise Jaccards of the observed top-3 directions (12, 13, 23).
    pub observed_pairwise: Vec<f64>,
    pub observed_mean: f64,
    pub combinatorial: f64,
    pub random_direction_mean: f64,
    pub random_direction_std: f64,
    /// Mean pairwise Jaccard per angle-matched triple.
    pub angle_matched_null: Vec<f64>,
    pub p_value: f64,
}

impl NullReport {
    pub fn assemble(
        observed_pairwise: Vec<f64>,
        combinatorial: f64,
        random_jaccards: &[f64],
        angle_matched_null: Vec<f64>,
    ) -> NullReport {
        let observed_mean =
            observed_pairwise.iter().sum::<f64>() / observed_pairwise.len().max(1) as f64;
        let n = random_jaccards.len().max(1) as f64;
        let mean = random_jaccards.iter().sum::<f64>() / n;
        let var = random_jaccards.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let p_value = p_value_geq(&angle_matched_null, observed_mean);
        NullReport {
            observed_pairwise,
            observed_mean,
            combinatorial,
            random_direction_mean: mean,
            random_direction_std: var.sqrt(),
            angle_matched_null,
            p_value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_low_dimensional_subspace() {
        // Data in an 8-dimensional subspace of R^16; a k=8 TopK SAE with 64
        // features should reconstruct it well.
        let d = 16;
        let sub = 8;
        let n = 512;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let basis: Vec<Vec<f32>> = (0..sub)
            .map(|j| {
                (0..d)
                    .map(|i| if i % sub == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut rows = vec![0.0f32; n * d];
        for i in 0..n {
            for b in &basis {
                let c: f64 = rng.sample(StandardNormal);
                for j in 0..d {
                    rows[i * d + j] += (c as f32) * b[j];
                }
            }
        }
        let cfg = SaeConfig { d_sae: 64, k: 8, steps: 8000, batch: 128, lr: 2e-3, seed: 3 };
        let sae = train_sae(&rows, d, &cfg).unwrap();
        assert!(sae.final_rel_err < 0.05, "rel err {}", sae.final_rel_err);
    }

    #[test]
    fn forward_keeps_at_most_k_active() {
        let d = 8;
        let n = 128;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<f32> = (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let cfg = SaeConfig { d_sae: 32, k: 5, steps: 50, batch: 32, lr: 1e-3, seed: 4 };
        let sae = train_sae(&rows, d, &cfg).unwrap();
        for i in 0..n {
            let (_, active) = sae.forward(&rows[i * d..(i + 1) * d]);
            assert!(active.len() <= 5);
        }
        // Decoder rows stay unit norm.
        for row in sae.w_dec.chunks_exact(d) {
            let norm: f64 = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let d = 8;
        let n = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<f32> = (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let cfg = SaeConfig { d_sae: 32, k: 4, steps: 60, batch: 16, lr: 1e-3, seed: 11 };
        let a = train_sae(&rows, d, &cfg).unwrap();
        let b = train_sae(&rows, d, &cfg).unwrap();
        assert_eq!(a.w_enc, b.w_enc);
        assert_eq!(a.w_dec, b.w_dec);
        assert_eq!(a.final_rel_err, b.final_rel_err);
    }

    #[test]
    fn impact_zero_perturbation_tie_break() {
        let d = 4;
        let sae = SaeModel {
            d_in: d,
            d_sae: 16,
            k: 4,
            mean: vec![0.0; d],
            w_enc: vec![0.1; d * 16],
            b_enc: vec![0.0; 16],
            w_dec: vec![0.0; 16 * d],
            final_rel_err: 0.0,
        };
        let rows = vec![1.0f32; 3 * d];
        let top = feature_impact(&sae, &rows, &rows, 5);
        assert_eq!(top, vec![0, 1, 2, 3, 4]); // all impacts zero: index order
    }

    #[test]
    fn impact_ranks_aligned_feature_first() {
        // Hand-built SAE: encoder row i reads coordinate i of the input.
        let d = 6;
        let d_sae = 6;
        let mut w_enc = vec![0.0f32; d * d_sae];
        for i in 0..d {
            w_enc[i * d_sae + i] = 1.0;
        }
        let sae = SaeModel {
            d_in: d,
            d_sae,
            k: 3,
            mean: vec![0.0; d],
            w_enc,
            b_enc: vec![0.0; d_sae],
            w_dec: vec![0.0; d_sae * d],
            final_rel_err: 0.0,
        };
        let base = vec![0.0f32; 4 * d];
        let mut pert = base.clone();
        for i in 0..4 {
            pert[i * d + 3] = 2.0; // perturb coordinate 3 only
        }
        let top = feature_impact(&sae, &base, &pert, 2);
        assert_eq!(top[0], 3);
        let exact = feature_impact(&sae, &base, &pert, 20.min(d_sae));
        assert_eq!(exact.len(), d_sae.min(20));
    }

    #[test]
    fn jaccard_basics() {
        let a: Vec<usize> = (0..20).collect();
        let b: Vec<usize> = (20..40).collect();
        assert_eq!(jaccard(&a, &a), 1.0);
        assert_eq!(jaccard(&a, &b), 0.0);
        assert_eq!(jaccard(&[], &[]), 1.0);
        let c: Vec<usize> = (10..30).collect();
        assert!((jaccard(&a, &c) - 10.0 / 30.0).abs() < 1e-12);
        assert_eq!(jaccard(&a, &c), jaccard(&c, &a));
    }

    #[test]
    fn random_twenty_of_512_mean_near_002() {
        // Simulation oracle for the combinatorial expectation.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut total = 0.0;
        let trials = 10_000;
        for _ in 0..trials {
            let draw = |rng: &mut ChaCha8Rng| -> Vec<usize> {
                let mut set = std::collections::HashSet::new();
                while set.len() < 20 {
                    set.insert(rng.gen_range(0..512usize));
                }
                set.into_iter().collect()
            };
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            total += jaccard(&a, &b);
        }
        let mean = total / trials as f64;
        assert!((mean - 0.02).abs() < 0.005, "simulated mean {mean}");
        let closed = combinatorial_expected_jaccard(20, 512);
        assert!((closed - mean).abs() < 0.005, "closed form {closed} vs simulated {mean}");
    }

    #[test]
    fn angle_matched_triples_have_exact_pairwise_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let triple = angle_matched_triple(64, 45.0, &mut rng);
            for i in 0..3 {
                let ni: f64 = triple[i].iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
                assert!((ni - 1.0).abs() < 1e-5);
                for j in (i + 1)..3 {
                    let dot: f64 =
                        triple[i].iter().zip(&triple[j]).map(|(&a, &b)| a as f64 * b as f64).sum();
                    let angle = dot.clamp(-1.0, 1.0).acos().to_degrees();
                    assert!((angle - 45.0).abs() < 0.5, "pair ({i},{j}) angle {angle}");
                }
            }
        }
    }

    #[test]
    fn p_values_uniform_under_self_null() {
        // Observed drawn from the null itself: p-values should be uniform.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let null: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut ps: Vec<f64> = (0..500)
            .map(|_| p_value_geq(&null, rng.sample::<f64, _>(StandardNormal)))
            .collect();
        ps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Kolmogorov-Smirnov distance against U[0,1], allowing for the
        // 1/200 discretization of the p-values.
        let n = ps.len() as f64;
        let mut d_stat = 0.0f64;
        for (i, &p) in ps.iter().enumerate() {
            let ecdf_hi = (i + 1) as f64 / n;
            let ecdf_lo = i as f64 / n;
            d_stat = d_stat.max((ecdf_hi - p).abs()).max((p - ecdf_lo).abs());
        }
        // Tolerance is set by the null size (200): its own ECDF carries
        // ~1.36/sqrt(200) sampling error, plus the 1/200 discretization.
        let _ = n;
        let threshold = 1.36 / (200.0f64).sqrt() + 1.0 / 200.0;
        assert!(d_stat < threshold, "KS distance {d_stat} over {threshold}");
    }

    #[test]
    fn null_report_assembly() {
        let report = NullReport::assemble(
            vec![0.3, 0.4, 0.5],
            0.02,
            &[0.1, 0.2, 0.3],
            vec![0.35, 0.45, 0.55, 0.25],
        );
        assert!((report.observed_mean - 0.4).abs() < 1e-12);
        assert!((report.random_direction_mean - 0.2).abs() < 1e-12);
        // Two null means (0.45, 0.55) >= 0.4 out of four.
        assert!((report.p_value - 0.5).abs() < 1e-12);
    }
}
