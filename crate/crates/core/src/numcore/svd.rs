//! Thin SVD by one-sided Jacobi: rotate column pairs to mutual orthogonality,
//! read singular values off the column norms. High relative accuracy, no
//! bidiagonalization machinery, entirely adequate for 128x128 weight matrices
//! and the small oracle instances in tests.

use super::{Mat, NumError};

const MAX_SWEEPS: usize = 60;

/// Thin SVD `A = U diag(s) V^T` with `s` descending and nonnegative.
/// `U` is `m x min(m,n)`, `V` is `n x min(m,n)`.
///
/// Columns of `U` matching an exactly-zero singular value are zero vectors;
/// they carry no reconstruction weight.
pub fn thin_svd(a: &Mat) -> Result<(Mat, Vec<f64>, Mat), NumError> {
    if !a.is_finite() {
        return Err(NumError::Degenerate("non-finite entries"));
    }
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        let (u, s, v) = svd_tall(&a.transpose())?;
        Ok((v, s, u))
    }
}

fn svd_tall(a: &Mat) -> Result<(Mat, Vec<f64>, Mat), NumError> {
    let m = a.rows();
    let n = a.cols();
    // Column-major working copy: Jacobi sweeps touch whole columns.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col_vec(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // Columns below this squared norm are numerically zero; rotating them
    // against each other only shuffles rounding noise and never converges.
    let scale2 = (0..n)
        .map(|j| cols[j].iter().map(|x| x * x).sum::<f64>())
        .fold(0.0f64, f64::max);
    let dead = 1e-28 * scale2;
    let mut converged = scale2 == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0
                    || gamma.abs() <= 1e-14 * (alpha * beta).sqrt()
                    || (alpha < dead && beta < dead)
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s, m);
                rotate_pair(&mut v, p, q, c, s, n);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(NumError::NoConvergence(MAX_SWEEPS));
    }

    let mut sv: Vec<(f64, usize)> =
        (0..n).map(|j| (cols[j].iter().map(|x| x * x).sum::<f64>().sqrt(), j)).collect();
    sv.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut u = Mat::zeros(m, n);
    let mut vm = Mat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &(sigma, j)) in sv.iter().enumerate() {
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..m {
                u.set(i, k, cols[j][i] / sigma);
            }
        }
        for i in 0..n {
            vm.set(i, k, v[j][i]);
        }
    }
    Ok((u, s, vm))
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64, len: usize) {
    for i in 0..len {
        let xp = cols[p][i];
        let xq = cols[q][i];
        cols[p][i] = c * xp - s * xq;
        cols[q][i] = s * xp + c * xq;
    }
}
