//! Ridge regression via normal equations and Cholesky. The feature counts in
//! the probe module reach ~9.4k columns, so the Gram build and factorization
//! are written as contiguous-row dot products.

use super::{Mat, NumError};

/// Minimize `||X W - Y||^2 + lambda ||W||^2`. Returns W (features x targets).
pub fn ridge_fit(x: &Mat, y: &Mat, lambda: f64) -> Result<Mat, NumError> {
    if !(lambda > 0.0) {
        return Err(NumError::BadLambda(lambda));
    }
    if x.rows() != y.rows() {
        return Err(NumError::Shape(format!(
            "X has {} rows, Y has {}",
            x.rows(),
            y.rows()
        )));
    }
    let f = x.cols();

    // G = X^T X + lambda I, built upper-triangle-first from row dots of X^T.
    let xt = x.transpose();
    let mut g = Mat::zeros(f, f);
    for i in 0..f {
        let ri = xt.row(i);
        for j in i..f {
            let dot: f64 = ri.iter().zip(xt.row(j)).map(|(a, b)| a * b).sum();
            g.set(i, j, dot);
            g.set(j, i, dot);
        }
        g.set(i, i, g.get(i, i) + lambda);
    }

    let l = cholesky(&g)?;
    let rhs = xt.matmul(y); // F x d
    Ok(cholesky_solve(&l, &rhs))
}

/// In-place-style lower Cholesky factor of a positive definite matrix.
pub(crate) fn cholesky(g: &Mat) -> Result<Mat, NumError> {
    let n = g.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = g.get(j, j);
        let lj = l.row(j)[..j].to_vec();
        d -= lj.iter().map(|v| v * v).sum::<f64>();
        if d <= 0.0 {
            return Err(NumError::NotPositiveDefinite);
        }
        let diag = d.sqrt();
        l.set(j, j, diag);
        for i in (j + 1)..n {
            let dot: f64 = l.row(i)[..j].iter().zip(&lj).map(|(a, b)| a * b).sum();
            let v = (g.get(i, j) - dot) / diag;
            l.set(i, j, v);
        }
    }
    Ok(l)
}

/// Solve `L L^T W = B` for W given the lower factor L.
pub(crate) fn cholesky_solve(l: &Mat, b: &Mat) -> Mat {
    let n = l.rows();
    let d = b.cols();
    let mut w = b.clone();
    // Forward: L z = b
    for i in 0..n {
        for j in 0..i {
            let lij = l.get(i, j);
            if lij == 0.0 {
                continue;
            }
            let (head, tail) = w.split_rows(j, i);
            let zj = &head[..d];
            for (t, &z) in tail.iter_mut().zip(zj) {
                *t -= lij * z;
            }
        }
        let diag = l.get(i, i);
        for v in w.row_mut(i) {
            *v /= diag;
        }
    }
    // Backward: L^T w = z
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            let lji = l.get(j, i);
            if lji == 0.0 {
                continue;
            }
            let (head, tail) = w.split_rows(i, j);
            let row_j = &tail[..d];
            for (t, &z) in head.iter_mut().zip(row_j) {
                *t -= lji * z;
            }
        }
        let diag = l.get(i, i);
        for v in w.row_mut(i) {
            *v /= diag;
        }
    }
    w
}

impl Mat {
    /// Mutable views of rows `a` and `b` (`a < b`): returns (row a, row b).
    fn split_rows(&mut self, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(a < b);
        let cols = self.cols();
        let data = self.data_mut();
        let (lo, hi) = data.split_at_mut(b * cols);
        (&mut lo[a * cols..(a + 1) * cols], &mut hi[..cols])
    }
}

/// Pooled coefficient of determination over all target dimensions jointly:
/// `1 - ||Y - Yhat||^2 / ||Y - colmean(Y)||^2`.
pub fn r_squared(y_hat: &Mat, y: &Mat) -> Result<f64, NumError> {
    if y_hat.rows() != y.rows() || y_hat.cols() != y.cols() {
        return Err(NumError::Shape("r_squared shape mismatch".into()));
    }
    let n = y.rows();
    let d = y.cols();
    let mut means = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in means.iter_mut().zip(y.row(i)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..n {
        for j in 0..d {
            let r = y.get(i, j) - y_hat.get(i, j);
            let t = y.get(i, j) - means[j];
            ss_res += r * r;
            ss_tot += t * t;
        }
    }
    if ss_tot == 0.0 {
        return Err(NumError::Degenerate("constant targets"));
    }
    Ok(1.0 - ss_res / ss_tot)
}
