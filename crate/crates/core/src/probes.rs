//! Ridge-regression probes of displacement fields with additive Fourier
//! features, multiplicative (discrete-log-phase) features, their
//! concatenation, and the full cross-term set.
//!
//! All feature sets share one domain mask (a, b nonzero mod p) so that probe
//! R-squared values are directly comparable across feature kinds. The cross
//! set at p = 97 is 9216 rows by 9408 columns; the normal equations are
//! accumulated row by row so the design matrix is held only once.

use crate::funcmode::PerturbationField;
use crate::groupmath::DlogTable;
use crate::numcore::{cholesky, cholesky_solve, Mat, NumError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("field modulus {0} does not match features built for {1}")]
    ModulusMismatch(u32, u32),
    #[error("split leaves an empty {0} set")]
    EmptySplit(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Additive,
    Multiplicative,
    Combined,
    Cross,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::Additive,
        FeatureKind::Multiplicative,
        FeatureKind::Combined,
        FeatureKind::Cross,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Additive => "additive",
            FeatureKind::Multiplicative => "multiplicative",
            FeatureKind::Combined => "combined",
            FeatureKind::Cross => "cross",
        }
    }
}

/// Standardized design matrix over the masked input pairs.
pub struct FeatureSet {
    pub kind: FeatureKind,
    pub p: u32,
    /// Masked pairs in row order.
    pub pairs: Vec<(u32, u32)>,
    pub matrix: Mat,
    pub labels: Vec<String>,
}

/// Build the standardized design matrix for one feature kind.
///
/// Raw features: cos/sin(2 pi w (a+b)/p) for w = 1..=(p-1)/2 (additive) and
/// cos/sin(2 pi w q/(p-1)) with q = (dlog a + dlog b) mod (p-1)
/// (multiplicative). Cross terms are products of one raw additive and one
/// raw multiplicative column, formed before standardization. Columns are
/// then standardized to zero mean and unit variance; identically-constant
/// columns (the multiplicative Nyquist sine) stay zero.
pub fn build_features(kind: FeatureKind, p: u32, dlog: &DlogTable) -> FeatureSet {
    let n_freq = ((p - 1) / 2) as usize;
    let pairs: Vec<(u32, u32)> = (1..p).flat_map(|a| (1..p).map(move |b| (a, b))).collect();
    let n = pairs.len();

    let mut add_cols: Vec<Vec<f64>> = Vec::new();
    let mut add_labels = Vec::new();
    let mut mul_cols: Vec<Vec<f64>> = Vec::new();
    let mut mul_labels = Vec::new();
    let two_pi = 2.0 * std::f64::consts::PI;
    for w in 1..=n_freq {
        let mut c = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        for &(a, b) in &pairs {
            let phase = two_pi * (w as u32 * ((a + b) % p)) as f64 / p as f64;
            c.push(phase.cos());
            s.push(phase.sin());
        }
        add_cols.push(c);
        add_cols.push(s);
        add_labels.push(format!("add_cos_{w}"));
        add_labels.push(format!("add_sin_{w}"));
    }
    let m = p - 1;
    for w in 1..=n_freq {
        let mut c = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        for &(a, b) in &pairs {
            let q = (dlog.dlog(a).unwrap() + dlog.dlog(b).unwrap()) % m;
            let phase = two_pi * (w as u32 * q) as f64 / m as f64;
            c.push(phase.cos());
            s.push(phase.sin());
        }
        mul_cols.push(c);
        mul_cols.push(s);
        mul_labels.push(format!("mul_cos_{w}"));
        mul_labels.push(format!("mul_sin_{w}"));
    }

    let mut cols: Vec<Vec<f64>>;
    let mut labels: Vec<String>;
    match kind {
        FeatureKind::Additive => {
            cols = add_cols;
            labels = add_labels;
        }
        FeatureKind::Multiplicative => {
            cols = mul_cols;
            labels = mul_labels;
        }
        FeatureKind::Combined | FeatureKind::Cross => {
            cols = add_cols.clone();
            cols.extend(mul_cols.iter().cloned());
            labels = add_labels.clone();
            labels.extend(mul_labels.iter().cloned());
            if kind == FeatureKind::Cross {
                for (ai, ac) in add_cols.iter().enumerate() {
                    for (mi, mc) in mul_cols.iter().enumerate() {
                        cols.push(ac.iter().zip(mc).map(|(x, y)| x * y).collect());
                        labels.push(format!("{}*{}", add_labels[ai], mul_labels[mi]));
                    }
                }
            }
        }
    }

    let f = cols.len();
    let mut matrix = Mat::zeros(n, f);
    for (j, col) in cols.iter().enumerate() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        if var > 1e-24 {
            let inv = var.sqrt().recip();
            for (i, &v) in col.iter().enumerate() {
                matrix.set(i, j, (v - mean) * inv);
            }
        } // constant columns stay zero
    }
    FeatureSet { kind, p, pairs, matrix, labels }
}

/// Probe result: held-out and train R-squared, pooled over all target
/// dimensions.
#[derive(Debug, Clone, Copy)]
pub struct ProbeResult {
    pub r2: f64,
    pub train_r2: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Ridge-probe a displacement field: 80/20 split of the masked pairs by
/// `split_seed`, ridge fit on the train split (intercept via train-mean
/// centering), R-squared on the held-out split.
pub fn probe_r2(
    features: &FeatureSet,
    field: &PerturbationField,
    lambda: f64,
    split_seed: u64,
) -> Result<ProbeResult, ProbeError> {
    if features.p != field.p {
        return Err(ProbeError::ModulusMismatch(field.p, features.p));
    }
    if !(lambda > 0.0) {
        return Err(ProbeError::Num(NumError::BadLambda(lambda)));
    }
    let n = features.pairs.len();
    let d = field.d_model;
    let f = features.matrix.cols();
    let p = field.p;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    order.shuffle(&mut rng);
    let n_train = (n * 8) / 10;
    if n_train == 0 || n_train == n {
        return Err(ProbeError::EmptySplit(if n_train == 0 { "train" } else { "test" }));
    }
    let (train_rows, test_rows) = order.split_at(n_train);

    let y_row = |row: usize| -> &[f32] {
        let (a, b) = features.pairs[row];
        let idx = (a * p + b) as usize;
        &field.delta_h[idx * d..(idx + 1) * d]
    };

    // Train means for centering (intercept handling).
    let mut x_mean = vec![0.0f64; f];
    let mut y_mean = vec![0.0f64; d];
    for &r in train_rows {
        for (m, &v) in x_mean.iter_mut().zip(features.matrix.row(r)) {
            *m += v;
        }
        for (m, &v) in y_mean.iter_mut().zip(y_row(r)) {
            *m += v as f64;
        }
    }
    let inv_nt = 1.0 / n_train as f64;
    for m in &mut x_mean {
        *m *= inv_nt;
    }
    for m in &mut y_mean {
        *m *= inv_nt;
    }

    // Normal equations over the train rows, corrected for centering:
    // G = sum (x-mu)(x-mu)^T = sum x x^T - n mu mu^T, likewise the rhs.
    let mut g = Mat::zeros(f, f);
    let mut rhs = Mat::zeros(f, d);
    for &r in train_rows {
        let x = features.matrix.row(r).to_vec();
        for a in 0..f {
            let xa = x[a];
            if xa == 0.0 {
                continue;
            }
            let grow = &mut g.row_mut(a)[a..];
            for (gv, &xv) in grow.iter_mut().zip(&x[a..]) {
                *gv += xa * xv;
            }
            let y = y_row(r);
            let rrow = rhs.row_mut(a);
            for (rv, &yv) in rrow.iter_mut().zip(y) {
                *rv += xa * yv as f64;
            }
        }
    }
    let nt = n_train as f64;
    for a in 0..f {
        for b in a..f {
            let v = g.get(a, b) - nt * x_mean[a] * x_mean[b];
            g.set(a, b, v);
            g.set(b, a, v);
        }
        g.set(a, a, g.get(a, a) + lambda);
        for j in 0..d {
            rhs.set(a, j, rhs.get(a, j) - nt * x_mean[a] * y_mean[j]);
        }
    }

    let l = cholesky(&g)?;
    let w = cholesky_solve(&l, &rhs);

    let r2_over = |rows: &[usize]| -> f64 {
        let mut mu = vec![0.0f64; d];
        for &r in rows {
            for (m, &v) in mu.iter_mut().zip(y_row(r)) {
                *m += v as f64;
            }
        }
        for m in &mut mu {
            *m /= rows.len() as f64;
        }
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        let mut pred = vec![0.0f64; d];
        for &r in rows {
            let x = features.matrix.row(r);
            pred.copy_from_slice(&y_mean);
            for a in 0..f {
                let xc = x[a] - x_mean[a];
                if xc == 0.0 {
                    continue;
                }
                for (pv, wv) in pred.iter_mut().zip(w.row(a)) {
                    *pv += xc * wv;
                }
            }
            let y = y_row(r);
            for j in 0..d {
                let res = y[j] as f64 - pred[j];
                let tot = y[j] as f64 - mu[j];
                ss_res += res * res;
                ss_tot += tot * tot;
            }
        }
        1.0 - ss_res / ss_tot
    };

    Ok(ProbeResult {
        r2: r2_over(test_rows),
        train_r2: r2_over(train_rows),
        n_train,
        n_test: n - n_train,
    })
}

/// Composition synergy: combined R-squared minus the best single-basis one.
pub fn synergy(r2_add: f64, r2_mul: f64, r2_combined: f64) -> f64 {
    r2_combined - r2_add.max(r2_mul)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groupmath::GroupingBasis;
    use rand::Rng;

    fn field_from_fn(
        p: u32,
        d: usize,
        mut f: impl FnMut(u32, u32, usize) -> f32,
    ) -> PerturbationField {
        let n = (p * p) as usize;
        let mut delta = vec![0.0f32; n * d];
        for a in 0..p {
            for b in 0..p {
                for j in 0..d {
                    delta[((a * p + b) as usize) * d + j] = f(a, b, j);
                }
            }
        }
        PerturbationField::from_delta(1, 0.01, p, d, delta)
    }

    #[test]
    fn additive_feature_counts_and_standardization() {
        let p = 97;
        let dlog = DlogTable::new(p).unwrap();
        let fs = build_features(FeatureKind::Additive, p, &dlog);
        assert_eq!(fs.matrix.cols(), 96);
        assert_eq!(fs.pairs.len(), 96 * 96);
        for j in 0..fs.matrix.cols() {
            let col = fs.matrix.col_vec(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-10, "column {j} mean {mean}");
            let var =
                col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
            assert!((var - 1.0).abs() < 1e-8, "column {j} var {var}");
        }
    }

    #[test]
    fn cross_feature_count() {
        let p = 97;
        let dlog = DlogTable::new(p).unwrap();
        let fs = build_features(FeatureKind::Cross, p, &dlog);
        assert_eq!(fs.matrix.cols(), 96 + 96 + 96 * 96);
        assert_eq!(fs.labels.len(), 9408);
        let fs2 = build_features(FeatureKind::Combined, p, &dlog);
        assert_eq!(fs2.matrix.cols(), 192);
    }

    #[test]
    fn additive_column_matches_grouping_value_reconstruction() {
        let p = 97u32;
        let dlog = DlogTable::new(p).unwrap();
        let fs = build_features(FeatureKind::Additive, p, &dlog);
        let j = fs.labels.iter().position(|l| l == "add_cos_26").unwrap();
        let col = fs.matrix.col_vec(j);
        let basis = GroupingBasis::additive_sum(p);
        let rebuilt: Vec<f64> = fs
            .pairs
            .iter()
            .map(|&(a, b)| {
                let q = basis.grouping_value(&dlog, a, b).unwrap();
                (2.0 * std::f64::consts::PI * 26.0 * q as f64 / p as f64).cos()
            })
            .collect();
        let n = col.len() as f64;
        let (mc, mr) = (col.iter().sum::<f64>() / n, rebuilt.iter().sum::<f64>() / n);
        let mut num = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (c, r) in col.iter().zip(&rebuilt) {
            num += (c - mc) * (r - mr);
            va += (c - mc) * (c - mc);
            vb += (r - mr) * (r - mr);
        }
        let corr = num / (va.sqrt() * vb.sqrt());
        assert!((corr - 1.0).abs() < 1e-10, "corr {corr}");
    }

    #[test]
    fn realizable_target_high_r2() {
        let p = 13u32;
        let dlog = DlogTable::new(p).unwrap();
        let fs = build_features(FeatureKind::Additive, p, &dlog);
        let field = field_from_fn(p, 3, |a, b, j| {
            let x = 2.0 * std::f64::consts::PI * ((a + b) % p) as f64 / p as f64;
            ((j as f64 + 1.0) * x.cos() + 0.5 * (2.0 * x).sin()) as f32
        });
        let out = probe_r2(&fs, &field, 1e-6, 7).unwrap();
        assert!(out.r2 > 0.95, "r2 = {}", out.r2);
    }

    #[test]
    fn noise_target_low_r2() {
        let p = 13u32;
        let dlog = DlogTable::new(p).unwrap();
        let fs = build_features(FeatureKind::Combined, p, &dlog);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for seed in 0..5 {
            let field = field_from_fn(p, 4, |_, _, _| rng.gen_range(-1.0f32..1.0));
            let out = probe_r2(&fs, &field, 1.0, seed).unwrap();
            assert!(out.r2 <= 0.05, "seed {seed}: noise r2 = {}", out.r2);
        }
    }

    #[test]
    fn train_r2_nests_across_feature_sets() {
        let p = 13u32;
        let dlog = DlogTable::new(p).unwrap();
        let add = build_features(FeatureKind::Additive, p, &dlog);
        let mul = build_features(FeatureKind::Multiplicative, p, &dlog);
        let comb = build_features(FeatureKind::Combined, p, &dlog);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let field = field_from_fn(p, 2, |a, b, _| {
            let x = ((a * b) % p) as f32 / p as f32;
            x * x + rng.gen_range(-0.1f32..0.1)
        });
        let lambda = 1e-3;
        let ra = probe_r2(&add, &field, lambda, 11).unwrap();
        let rm = probe_r2(&mul, &field, lambda, 11).unwrap();
        let rc = probe_r2(&comb, &field, lambda, 11).unwrap();
        assert!(
            rc.train_r2 >= ra.train_r2.max(rm.train_r2) - 1e-9,
            "combined {} vs add {} mul {}",
            rc.train_r2,
            ra.train_r2,
            rm.train_r2
        );
    }

    #[test]
    fn r2_invariant_to_column_rescaling() {
        let p = 13u32;
        let dlog = DlogTable::new(p).unwrap();
        let fs = build_features(FeatureKind::Additive, p, &dlog);
        let field =
            field_from_fn(p, 2, |a, b, j| ((a + 2 * b + j as u32) % p) as f32 / p as f32);
        let base = probe_r2(&fs, &field, 0.5, 3).unwrap();
        // Flipping a standardized column's sign is what any affine rescale
        // of the raw column reduces to after re-standardization.
        let mut scaled = Mat::zeros(fs.matrix.rows(), fs.matrix.cols());
        for i in 0..fs.matrix.rows() {
            for j in 0..fs.matrix.cols() {
                let v = fs.matrix.get(i, j);
                scaled.set(i, j, if j == 4 { -v } else { v });
            }
        }
        let flipped = FeatureSet {
            kind: fs.kind,
            p: fs.p,
            pairs: fs.pairs.clone(),
            matrix: scaled,
            labels: fs.labels.clone(),
        };
        let out = probe_r2(&flipped, &field, 0.5, 3).unwrap();
        assert!((out.r2 - base.r2).abs() < 1e-10);
    }

    #[test]
    fn synergy_examples() {
        assert!((synergy(0.1, 0.2, 0.3) - 0.1).abs() < 1e-12);
        assert_eq!(synergy(0.3, 0.2, 0.3), 0.0);
    }
}
