//! Dense numerical kernels shared by all analysis modules: symmetric
//! eigendecomposition, thin SVD, DFT power spectra, ridge regression, PCA via
//! the Gram trick, and effective rank.
//!
//! Everything here runs in 64-bit floats. Problem sizes are small (Gram
//! matrices are 20x20, weight matrices 128x128, signals have at most 97
//! samples), so the kernels favor accuracy and simplicity: cyclic Jacobi for
//! eigenvalues, one-sided Jacobi for the SVD, naive O(M^2) DFT.

mod dft;
mod eig;
mod mat;
mod ridge;
mod svd;

pub use dft::{dft_power, PowerSpectrum};
pub use eig::sym_eig;
pub use mat::Mat;
pub use ridge::{r_squared, ridge_fit};
pub(crate) use ridge::{cholesky, cholesky_solve};
pub use svd::thin_svd;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("ridge lambda must be positive, got {0}")]
    BadLambda(f64),
    #[error("normal equations are not positive definite")]
    NotPositiveDefinite,
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Eigen- or singular spectrum: values sorted descending, optional
/// orthonormal vectors stored as matrix columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Option<Mat>,
}

/// Effective rank of a singular-value profile: `exp(H(p))` with
/// `p_j = s_j^2 / sum(s^2)` and `0 log 0 := 0`.
pub fn effective_rank(singular_values: &[f64]) -> Result<f64, NumError> {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if !(total > 0.0) {
        return Err(NumError::Degenerate("all-zero singular values"));
    }
    let mut entropy = 0.0;
    for s in singular_values {
        let p = s * s / total;
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    Ok(entropy.exp())
}

/// Eigenvalues of the second-moment matrix `(1/n) sum_i x_i x_i^T` of a set
/// of high-dimensional snapshots, computed through the n x n Gram matrix.
///
/// Returned descending, clamped at zero. Snapshots are not centered: the
/// displacement trajectories this serves are measured from a fixed origin.
pub fn second_moment_eigs(snapshots: &[Vec<f32>]) -> Result<Vec<f64>, NumError> {
    let n = snapshots.len();
    if n < 2 {
        return Err(NumError::Degenerate("need at least 2 snapshots"));
    }
    let mut gram = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let dot: f64 = snapshots[i]
                .iter()
                .zip(&snapshots[j])
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            let v = dot / n as f64;
            gram.set(i, j, v);
            gram.set(j, i, v);
        }
    }
    let spec = sym_eig(&gram)?;
    Ok(spec.values.iter().map(|&v| v.max(0.0)).collect())
}
