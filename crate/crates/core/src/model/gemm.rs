//! Dense kernels for the training loop. Weights are row-major `[in][out]` so
//! the inner loops walk contiguous rows; `mul_add` lets the compiler emit
//! FMA. The k-dimension is unrolled by 4 to amortize accumulator traffic.
//!
//! The `dy . W^T` products go through an explicit transpose plus the same
//! forward kernel: the transposes are negligible against the batch dimension
//! and keep every hot loop on the fast contiguous-row path.

use super::Real;

// Register tile: TI batch rows by TJ output columns accumulate in registers
// across the whole k loop, so each weight row is loaded once per TI rows.
const TI: usize = 4;
const TJ: usize = 32;

/// `y[i,:] = sum_k x[i,k] * w[k,:]` for `i < b`. `y` is overwritten.
pub fn matmul_xw<F: Real>(x: &[F], w: &[F], y: &mut [F], b: usize, din: usize, dout: usize) {
    debug_assert_eq!(x.len(), b * din);
    debug_assert_eq!(w.len(), din * dout);
    debug_assert_eq!(y.len(), b * dout);
    y.fill(F::zero());
    matmul_xw_acc(x, w, y, b, din, dout);
}

/// Like `matmul_xw` but accumulating into `y`.
pub fn matmul_xw_acc<F: Real>(x: &[F], w: &[F], y: &mut [F], b: usize, din: usize, dout: usize) {
    debug_assert_eq!(x.len(), b * din);
    debug_assert_eq!(w.len(), din * dout);
    debug_assert_eq!(y.len(), b * dout);
    let mut i = 0;
    while i + TI <= b {
        let mut j0 = 0;
        while j0 + TJ <= dout {
            tile_kernel(x, w, y, i, j0, din, dout);
            j0 += TJ;
        }
        if j0 < dout {
            for r in 0..TI {
                edge_kernel(x, w, y, i + r, j0, din, dout);
            }
        }
        i += TI;
    }
    while i < b {
        edge_kernel(x, w, y, i, 0, din, dout);
        i += 1;
    }
}

/// Full TI x TJ register tile at rows i0.., columns j0..j0+TJ.
#[inline]
fn tile_kernel<F: Real>(x: &[F], w: &[F], y: &mut [F], i0: usize, j0: usize, din: usize, dout: usize) {
    let x0 = &x[i0 * din..(i0 + 1) * din];
    let x1 = &x[(i0 + 1) * din..(i0 + 2) * din];
    let x2 = &x[(i0 + 2) * din..(i0 + 3) * din];
    let x3 = &x[(i0 + 3) * din..(i0 + 4) * din];
    let mut acc = [[F::zero(); TJ]; TI];
    for k in 0..din {
        let wrow = &w[k * dout + j0..k * dout + j0 + TJ];
        let a0 = x0[k];
        let a1 = x1[k];
        let a2 = x2[k];
        let a3 = x3[k];
        for j in 0..TJ {
            acc[0][j] = a0.mul_add(wrow[j], acc[0][j]);
            acc[1][j] = a1.mul_add(wrow[j], acc[1][j]);
            acc[2][j] = a2.mul_add(wrow[j], acc[2][j]);
            acc[3][j] = a3.mul_add(wrow[j], acc[3][j]);
        }
    }
    for r in 0..TI {
        let yrow = &mut y[(i0 + r) * dout + j0..(i0 + r) * dout + j0 + TJ];
        for j in 0..TJ {
            yrow[j] = yrow[j] + acc[r][j];
        }
    }
}

/// One row, columns j0..dout (tail columns or tail rows).
#[inline]
fn edge_kernel<F: Real>(x: &[F], w: &[F], y: &mut [F], i: usize, j0: usize, din: usize, dout: usize) {
    let xrow = &x[i * din..(i + 1) * din];
    let yrow = &mut y[i * dout + j0..(i + 1) * dout];
    for (k, &xk) in xrow.iter().enumerate() {
        let wrow = &w[k * dout + j0..(k + 1) * dout];
        for (yv, &wv) in yrow.iter_mut().zip(wrow) {
            *yv = xk.mul_add(wv, *yv);
        }
    }
}

/// `dw[k,:] += sum_i x[i,k] * dy[i,:]` (gradient of `y = x w` w.r.t. `w`),
/// unrolled four batch rows at a time so each `dw` row load serves four
/// accumulations.
pub fn matmul_xt_dy<F: Real>(x: &[F], dy: &[F], dw: &mut [F], b: usize, din: usize, dout: usize) {
    debug_assert_eq!(x.len(), b * din);
    debug_assert_eq!(dy.len(), b * dout);
    debug_assert_eq!(dw.len(), din * dout);
    let mut i = 0;
    while i + 4 <= b {
        let x0 = &x[i * din..(i + 1) * din];
        let x1 = &x[(i + 1) * din..(i + 2) * din];
        let x2 = &x[(i + 2) * din..(i + 3) * din];
        let x3 = &x[(i + 3) * din..(i + 4) * din];
        let dy0 = &dy[i * dout..(i + 1) * dout];
        let dy1 = &dy[(i + 1) * dout..(i + 2) * dout];
        let dy2 = &dy[(i + 2) * dout..(i + 3) * dout];
        let dy3 = &dy[(i + 3) * dout..(i + 4) * dout];
        for k in 0..din {
            let a0 = x0[k];
            let a1 = x1[k];
            let a2 = x2[k];
            let a3 = x3[k];
            let dwrow = &mut dw[k * dout..(k + 1) * dout];
            for j in 0..dout {
                let acc = a0.mul_add(dy0[j], dwrow[j]);
                let acc = a1.mul_add(dy1[j], acc);
                let acc = a2.mul_add(dy2[j], acc);
                dwrow[j] = a3.mul_add(dy3[j], acc);
            }
        }
        i += 4;
    }
    while i < b {
        let xrow = &x[i * din..(i + 1) * din];
        let dyrow = &dy[i * dout..(i + 1) * dout];
        for (k, &xk) in xrow.iter().enumerate() {
            let dwrow = &mut dw[k * dout..(k + 1) * dout];
            for (dv, &gv) in dwrow.iter_mut().zip(dyrow) {
                *dv = xk.mul_add(gv, *dv);
            }
        }
        i += 1;
    }
}

/// `wt = w^T` for a row-major `rows x cols` matrix.
pub fn transpose_into<F: Copy>(w: &[F], wt: &mut [F], rows: usize, cols: usize) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert!(wt.len() >= rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            wt[c * rows + r] = w[r * cols + c];
        }
    }
}

/// Lane-parallel dot product with a fixed reduction order.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    const LANES: usize = 16;
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let off = c * LANES;
        for l in 0..LANES {
            acc[l] = a[off + l].mul_add(b[off + l], acc[l]);
        }
    }
    let mut tail = F::zero();
    for i in chunks * LANES..a.len() {
        tail = a[i].mul_add(b[i], tail);
    }
    let mut total = tail;
    for v in acc {
        total = total + v;
    }
    total
}
