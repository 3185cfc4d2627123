//! Reverse-mode gradients of the mean cross-entropy, hand-derived for the
//! fixed 2-block architecture. Gradients accumulate into `Grads`, so a
//! multitask step can sum contributions from several task batches.

use super::forward::{ln_recompute, Workspace};
use super::gemm::{dot, matmul_xt_dy, matmul_xw, matmul_xw_acc, transpose_into};
use super::{AttnVector, Model, ParamId, Real, SEQ_LEN};

impl<F: Real> Grads<F> {
    pub fn zeros(model: &Model<F>) -> Grads<F> {
        Grads { bufs: model.store.iter().map(|(_, d)| vec![F::zero(); d.len()]).collect() }
    }

    pub fn zero_all(&mut self) {
        for b in &mut self.bufs {
            b.fill(F::zero());
        }
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[F] {
        &self.bufs[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.bufs[id.0]
    }

    /// Gradient buffer for the i-th parameter, in parameter-store order.
    pub fn by_index(&self, i: usize) -> &[F] {
        &self.bufs[i]
    }

    /// Flatten the attention-parameter gradients in block order.
    pub fn attn_flat(&self, model: &Model<F>) -> AttnVector {
        let layout = model.layout();
        let mut data = Vec::with_capacity(layout.dim());
        for l in &model.ids.layers {
            for id in [l.wq, l.wk, l.wv, l.wo] {
                data.extend(self.get(id).iter().map(|v| v.as_f32()));
            }
        }
        AttnVector { layout, data }
    }
}

/// Gradient buffers, parallel to the model's parameter store.
#[derive(Debug, Clone)]
pub struct Grads<F> {
    pub(crate) bufs: Vec<Vec<F>>,
}

fn colsum_acc<F: Real>(src: &[F], dst: &mut [F], b: usize, d: usize) {
    for i in 0..b {
        let row = &src[i * d..(i + 1) * d];
        for (dv, &sv) in dst.iter_mut().zip(row) {
            *dv = *dv + sv;
        }
    }
}

/// dx += layer-norm backward; accumulates gain/bias gradients.
#[allow(clippy::too_many_arguments)]
fn ln_backward<F: Real>(
    x: &[F],
    mean: &[F],
    rstd: &[F],
    gain: &[F],
    dy: &[F],
    dx: &mut [F],
    dgain: &mut [F],
    dbias: &mut [F],
    b: usize,
    d: usize,
) {
    let inv_d = F::of(1.0 / d as f64);
    for i in 0..b {
        let xrow = &x[i * d..(i + 1) * d];
        let dyrow = &dy[i * d..(i + 1) * d];
        let dxrow = &mut dx[i * d..(i + 1) * d];
        let (m, r) = (mean[i], rstd[i]);
        let mut s1 = F::zero();
        let mut s2 = F::zero();
        for j in 0..d {
            let xhat = (xrow[j] - m) * r;
            let dxhat = dyrow[j] * gain[j];
            s1 = s1 + dxhat;
            s2 = xhat.mul_add(dxhat, s2);
            dgain[j] = dyrow[j].mul_add(xhat, dgain[j]);
            dbias[j] = dbias[j] + dyrow[j];
        }
        s1 = s1 * inv_d;
        s2 = s2 * inv_d;
        for j in 0..d {
            let xhat = (xrow[j] - m) * r;
            let dxhat = dyrow[j] * gain[j];
            dxrow[j] = dxrow[j] + r * (dxhat - s1 - xhat * s2);
        }
    }
}

/// Backward pass over the batch most recently run through `forward_batch`
/// with `with_head = true`. Accumulates the gradient of the mean
/// cross-entropy into `grads`.
pub fn backward<F: Real>(
    model: &Model<F>,
    ws: &mut Workspace<F>,
    batch: &[(u32, u32, u32)],
    task: usize,
    grads: &mut Grads<F>,
) {
    let b = batch.len();
    assert_eq!(b, ws.b, "backward batch must match the last forward batch");
    let d = model.cfg.d_model;
    let dff = model.cfg.d_ff;
    let vocab = model.cfg.vocab;
    let n_heads = model.cfg.n_heads;
    let dh = d / n_heads;
    let scale = F::of(1.0 / (dh as f64).sqrt());
    let inv_b = F::of(1.0 / b as f64);

    // dlogits = (softmax - onehot) / B
    for (i, &(_, _, label)) in batch.iter().enumerate() {
        let prow = &ws.probs[i * vocab..(i + 1) * vocab];
        let drow = &mut ws.s_logits[i * vocab..(i + 1) * vocab];
        for j in 0..vocab {
            drow[j] = prow[j] * inv_b;
        }
        drow[label as usize] = drow[label as usize] - inv_b;
    }

    // Head: logits = final_y . Wh + bh
    let (hw, hb) = model.ids.heads[task];
    matmul_xt_dy(
        &ws.final_y[..b * d],
        &ws.s_logits[..b * vocab],
        grads.get_mut(hw),
        b,
        d,
        vocab,
    );
    colsum_acc(&ws.s_logits[..b * vocab], grads.get_mut(hb), b, vocab);
    transpose_into(model.store.get(hw), &mut ws.s_wt, d, vocab);
    matmul_xw(
        &ws.s_logits[..b * vocab],
        &ws.s_wt[..d * vocab],
        &mut ws.s_d2[1][..b * d],
        b,
        vocab,
        d,
    );

    // Final layer norm (reads x_out of the last layer at the last position).
    ws.s_d[0][..b * d].fill(F::zero());
    ws.s_d[1][..b * d].fill(F::zero());
    {
        let last = ws.layers.last().expect("at least one layer");
        let (dg, db) = (model.ids.final_ln_g, model.ids.final_ln_b);
        // Two sequential mutable borrows of grads; split via temporary copies
        // is unnecessary because ln_backward takes both at once.
        let mut dgain = std::mem::take(grads.get_mut_vec(dg));
        let mut dbias = std::mem::take(grads.get_mut_vec(db));
        ln_backward(
            &last.x_out[SEQ_LEN - 1],
            &ws.final_mean,
            &ws.final_rstd,
            model.store.get(model.ids.final_ln_g),
            &ws.s_d2[1][..b * d],
            &mut ws.s_d[1][..b * d],
            &mut dgain,
            &mut dbias,
            b,
            d,
        );
        *grads.get_mut_vec(dg) = dgain;
        *grads.get_mut_vec(db) = dbias;
    }

    for li in (0..model.cfg.n_layers).rev() {
        let ids = model.ids.layers[li].clone();
        let (done, rest) = ws.layers.split_at(li);
        let lc = &rest[0];
        let x_in: [&[F]; SEQ_LEN] = if li == 0 {
            [&ws.x0[0], &ws.x0[1]]
        } else {
            let prev = &done[li - 1];
            [&prev.x_out[0], &prev.x_out[1]]
        };

        for p in 0..SEQ_LEN {
            // MLP sublayer backward: x_out = x_mid + W2 . gelu(W1 . ln2(x_mid) + b1) + b2
            colsum_acc(&ws.s_d[p][..b * d], grads.get_mut(ids.b2), b, d);
            matmul_xt_dy(
                &lc.h_act[p][..b * dff],
                &ws.s_d[p][..b * d],
                grads.get_mut(ids.w2),
                b,
                dff,
                d,
            );
            transpose_into(model.store.get(ids.w2), &mut ws.s_wt, dff, d);
            matmul_xw(
                &ws.s_d[p][..b * d],
                &ws.s_wt[..d * dff],
                &mut ws.s_ff[..b * dff],
                b,
                d,
                dff,
            );
            for (g, &deriv) in ws.s_ff[..b * dff].iter_mut().zip(&lc.h_deriv[p][..b * dff]) {
                *g = *g * deriv;
            }
            colsum_acc(&ws.s_ff[..b * dff], grads.get_mut(ids.b1), b, dff);
            ln_recompute(
                &lc.x_mid[p],
                model.store.get(ids.ln2_g),
                model.store.get(ids.ln2_b),
                &lc.ln2_mean[p],
                &lc.ln2_rstd[p],
                &mut ws.s_d3[p],
                b,
                d,
            );
            matmul_xt_dy(
                &ws.s_d3[p][..b * d],
                &ws.s_ff[..b * dff],
                grads.get_mut(ids.w1),
                b,
                d,
                dff,
            );
            transpose_into(model.store.get(ids.w1), &mut ws.s_wt, d, dff);
            matmul_xw(
                &ws.s_ff[..b * dff],
                &ws.s_wt[..d * dff],
                &mut ws.s_d2[p][..b * d],
                b,
                dff,
                d,
            );
            let mut dgain = std::mem::take(grads.get_mut_vec(ids.ln2_g));
            let mut dbias = std::mem::take(grads.get_mut_vec(ids.ln2_b));
            ln_backward(
                &lc.x_mid[p],
                &lc.ln2_mean[p],
                &lc.ln2_rstd[p],
                model.store.get(ids.ln2_g),
                &ws.s_d2[p][..b * d],
                &mut ws.s_d[p][..b * d],
                &mut dgain,
                &mut dbias,
                b,
                d,
            );
            *grads.get_mut_vec(ids.ln2_g) = dgain;
            *grads.get_mut_vec(ids.ln2_b) = dbias;
            // ws.s_d[p] now holds the gradient w.r.t. x_mid.

            // Output projection: x_mid = x_in + ctx . Wo
            matmul_xt_dy(
                &lc.ctx[p][..b * d],
                &ws.s_d[p][..b * d],
                grads.get_mut(ids.wo),
                b,
                d,
                d,
            );
            transpose_into(model.store.get(ids.wo), &mut ws.s_wt, d, d);
            matmul_xw(
                &ws.s_d[p][..b * d],
                &ws.s_wt[..d * d],
                &mut ws.s_d2[p][..b * d],
                b,
                d,
                d,
            );
        }

        // Attention core backward; dctx lives in s_d2.
        for p in 0..SEQ_LEN {
            ws.s_dq[p][..b * d].fill(F::zero());
            ws.s_dk[p][..b * d].fill(F::zero());
            ws.s_dv[p][..b * d].fill(F::zero());
        }
        for qp in 0..SEQ_LEN {
            for i in 0..b {
                for h in 0..n_heads {
                    let hs = i * d + h * dh;
                    let dctx = &ws.s_d2[qp][hs..hs + dh];
                    let a0 = lc.att[qp][i * n_heads * SEQ_LEN + h * SEQ_LEN];
                    let a1 = lc.att[qp][i * n_heads * SEQ_LEN + h * SEQ_LEN + 1];
                    let da0 = dot(dctx, &lc.v[0][hs..hs + dh]);
                    let da1 = dot(dctx, &lc.v[1][hs..hs + dh]);
                    for j in 0..dh {
                        ws.s_dv[0][hs + j] = a0.mul_add(dctx[j], ws.s_dv[0][hs + j]);
                        ws.s_dv[1][hs + j] = a1.mul_add(dctx[j], ws.s_dv[1][hs + j]);
                    }
                    let g = a0 * da0 + a1 * da1;
                    let ds0 = a0 * (da0 - g) * scale;
                    let ds1 = a1 * (da1 - g) * scale;
                    let q = &lc.q[qp][hs..hs + dh];
                    let k0 = &lc.k[0][hs..hs + dh];
                    let k1 = &lc.k[1][hs..hs + dh];
                    for j in 0..dh {
                        ws.s_dq[qp][hs + j] =
                            ds0.mul_add(k0[j], ds1.mul_add(k1[j], ws.s_dq[qp][hs + j]));
                        ws.s_dk[0][hs + j] = ds0.mul_add(q[j], ws.s_dk[0][hs + j]);
                        ws.s_dk[1][hs + j] = ds1.mul_add(q[j], ws.s_dk[1][hs + j]);
                    }
                }
            }
        }

        for p in 0..SEQ_LEN {
            ln_recompute(
                x_in[p],
                model.store.get(ids.ln1_g),
                model.store.get(ids.ln1_b),
                &lc.ln1_mean[p],
                &lc.ln1_rstd[p],
                &mut ws.s_d3[p],
                b,
                d,
            );
            matmul_xt_dy(&ws.s_d3[p][..b * d], &ws.s_dq[p][..b * d], grads.get_mut(ids.wq), b, d, d);
            matmul_xt_dy(&ws.s_d3[p][..b * d], &ws.s_dk[p][..b * d], grads.get_mut(ids.wk), b, d, d);
            matmul_xt_dy(&ws.s_d3[p][..b * d], &ws.s_dv[p][..b * d], grads.get_mut(ids.wv), b, d, d);
            transpose_into(model.store.get(ids.wq), &mut ws.s_wt, d, d);
            matmul_xw(&ws.s_dq[p][..b * d], &ws.s_wt[..d * d], &mut ws.s_d2[p][..b * d], b, d, d);
            transpose_into(model.store.get(ids.wk), &mut ws.s_wt, d, d);
            matmul_xw_acc(&ws.s_dk[p][..b * d], &ws.s_wt[..d * d], &mut ws.s_d2[p][..b * d], b, d, d);
            transpose_into(model.store.get(ids.wv), &mut ws.s_wt, d, d);
            matmul_xw_acc(&ws.s_dv[p][..b * d], &ws.s_wt[..d * d], &mut ws.s_d2[p][..b * d], b, d, d);
            let mut dgain = std::mem::take(grads.get_mut_vec(ids.ln1_g));
            let mut dbias = std::mem::take(grads.get_mut_vec(ids.ln1_b));
            ln_backward(
                x_in[p],
                &lc.ln1_mean[p],
                &lc.ln1_rstd[p],
                model.store.get(ids.ln1_g),
                &ws.s_d2[p][..b * d],
                &mut ws.s_d[p][..b * d],
                &mut dgain,
                &mut dbias,
                b,
                d,
            );
            *grads.get_mut_vec(ids.ln1_g) = dgain;
            *grads.get_mut_vec(ids.ln1_b) = dbias;
        }
    }

    // Embeddings.
    {
        let dtok = grads.get_mut(model.ids.tok_emb);
        for (i, &(a, bb, _)) in batch.iter().enumerate() {
            for (p, t) in [(0usize, a as usize), (1, bb as usize)] {
                let src = &ws.s_d[p][i * d..(i + 1) * d];
                let dst = &mut dtok[t * d..(t + 1) * d];
                for j in 0..d {
                    dst[j] = dst[j] + src[j];
                }
            }
        }
    }
    let dpos = grads.get_mut(model.ids.pos_emb);
    for p in 0..SEQ_LEN {
        let dst = &mut dpos[p * d..(p + 1) * d];
        for i in 0..b {
            let src = &ws.s_d[p][i * d..(i + 1) * d];
            for j in 0..d {
                dst[j] = dst[j] + src[j];
            }
        }
    }
}

impl<F: Real> Grads<F> {
    pub(crate) fn get_mut_vec(&mut self, id: ParamId) -> &mut Vec<F> {
        &mut self.bufs[id.0]
    }
}
