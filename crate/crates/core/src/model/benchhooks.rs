//! Raw kernel entry points for the bench crate.

use super::forward::gelu_grad;
use super::gemm;

pub fn matmul_xw(x: &[f32], w: &[f32], y: &mut [f32], b: usize, din: usize, dout: usize) {
    gemm::matmul_xw(x, w, y, b, din, dout);
}

pub fn matmul_xt_dy(x: &[f32], dy: &[f32], dw: &mut [f32], b: usize, din: usize, dout: usize) {
    gemm::matmul_xt_dy(x, dy, dw, b, din, dout);
}

pub fn transpose_into(w: &[f32], wt: &mut [f32], rows: usize, cols: usize) {
    gemm::transpose_into(w, wt, rows, cols);
}

pub fn gelu_grad_all(h: &mut [f32]) {
    for v in h.iter_mut() {
        *v = gelu_grad(*v);
    }
}
