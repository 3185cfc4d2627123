//! Batched forward pass. All activations needed by the backward pass are
//! cached in a reusable `Workspace`; layer-norm outputs are recomputed from
//! the stored inputs and statistics instead of being cached.

use super::gemm::{dot, matmul_xw};
use super::{Model, Real, SEQ_LEN};

/// GELU (tanh approximation).
#[cfg(test)]
pub(crate) fn gelu<F: Real>(x: F) -> F {
    gelu_and_grad(x).0
}

pub(crate) fn gelu_grad<F: Real>(x: F) -> F {
    gelu_and_grad(x).1
}

/// Value and derivative sharing a single tanh evaluation.
#[inline]
pub(crate) fn gelu_and_grad<F: Real>(x: F) -> (F, F) {
    let c0 = F::of(0.7978845608028654);
    let c1 = F::of(0.044715);
    let half = F::of(0.5);
    let u = c0 * (x + c1 * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    let value = half * x * (F::one() + t);
    let grad =
        half * (F::one() + t) + half * x * sech2 * c0 * (F::one() + F::of(3.0) * c1 * x * x);
    (value, grad)
}

/// Per-layer activation cache, one buffer per sequence position.
pub(crate) struct LayerCache<F> {
    pub ln1_mean: [Vec<F>; SEQ_LEN],
    pub ln1_rstd: [Vec<F>; SEQ_LEN],
    pub q: [Vec<F>; SEQ_LEN],
    pub k: [Vec<F>; SEQ_LEN],
    pub v: [Vec<F>; SEQ_LEN],
    /// Softmax weights: for query position i, `att[i][b, h*SEQ + j]`.
    pub att: [Vec<F>; SEQ_LEN],
    pub ctx: [Vec<F>; SEQ_LEN],
    pub x_mid: [Vec<F>; SEQ_LEN],
    pub ln2_mean: [Vec<F>; SEQ_LEN],
    pub ln2_rstd: [Vec<F>; SEQ_LEN],
    pub h_pre: [Vec<F>; SEQ_LEN],
    pub h_act: [Vec<F>; SEQ_LEN],
    /// GELU derivative at h_pre, cached for the backward pass.
    pub h_deriv: [Vec<F>; SEQ_LEN],
    pub x_out: [Vec<F>; SEQ_LEN],
}

/// Reusable buffers for forward and backward over batches up to a fixed
/// capacity. Allocate once per run; reuse across steps.
pub struct Workspace<F> {
    pub(crate) cap: usize,
    pub(crate) b: usize,
    pub(crate) x0: [Vec<F>; SEQ_LEN],
    pub(crate) layers: Vec<LayerCache<F>>,
    pub(crate) final_mean: Vec<F>,
    pub(crate) final_rstd: Vec<F>,
    pub(crate) final_y: Vec<F>,
    pub logits: Vec<F>,
    pub(crate) probs: Vec<F>,
    // Scratch shared by forward and backward.
    pub(crate) s_d: [Vec<F>; SEQ_LEN],
    pub(crate) s_d2: [Vec<F>; SEQ_LEN],
    pub(crate) s_d3: [Vec<F>; SEQ_LEN],
    pub(crate) s_dq: [Vec<F>; SEQ_LEN],
    pub(crate) s_dk: [Vec<F>; SEQ_LEN],
    pub(crate) s_dv: [Vec<F>; SEQ_LEN],
    pub(crate) s_ff: Vec<F>,
    pub(crate) s_logits: Vec<F>,
    /// Transposed-weight scratch for the backward pass.
    pub(crate) s_wt: Vec<F>,
}

impl<F: Real> Workspace<F> {
    pub fn new(model: &Model<F>, cap: usize) -> Workspace<F> {
        let d = model.cfg.d_model;
        let dff = model.cfg.d_ff;
        let vocab = model.cfg.vocab;
        let h2 = model.cfg.n_heads * SEQ_LEN;
        let bd = || [vec![F::zero(); cap * d], vec![F::zero(); cap * d]];
        let bs = || [vec![F::zero(); cap], vec![F::zero(); cap]];
        let layers = (0..model.cfg.n_layers)
            .map(|_| LayerCache {
                ln1_mean: bs(),
                ln1_rstd: bs(),
                q: bd(),
                k: bd(),
                v: bd(),
                att: [vec![F::zero(); cap * h2], vec![F::zero(); cap * h2]],
                ctx: bd(),
                x_mid: bd(),
                ln2_mean: bs(),
                ln2_rstd: bs(),
                h_pre: [vec![F::zero(); cap * dff], vec![F::zero(); cap * dff]],
                h_act: [vec![F::zero(); cap * dff], vec![F::zero(); cap * dff]],
                h_deriv: [vec![F::zero(); cap * dff], vec![F::zero(); cap * dff]],
                x_out: bd(),
            })
            .collect();
        Workspace {
            cap,
            b: 0,
            x0: bd(),
            layers,
            final_mean: vec![F::zero(); cap],
            final_rstd: vec![F::zero(); cap],
            final_y: vec![F::zero(); cap * d],
            logits: vec![F::zero(); cap * vocab],
            probs: vec![F::zero(); cap * vocab],
            s_d: bd(),
            s_d2: bd(),
            s_d3: bd(),
            s_dq: bd(),
            s_dk: bd(),
            s_dv: bd(),
            s_ff: vec![F::zero(); cap * dff],
            s_logits: vec![F::zero(); cap * vocab],
            s_wt: vec![F::zero(); (d * d).max(d * dff).max(d * vocab)],
        }
    }

    /// Residual-stream row at position 0 after the final block, before the
    /// final norm, for batch row `i` of the last forward pass.
    pub fn residual_pos0(&self, i: usize) -> &[F] {
        let d = self.x0[0].len() / self.cap;
        let last = self.layers.last().expect("at least one layer");
        &last.x_out[0][i * d..(i + 1) * d]
    }

    pub fn batch_len(&self) -> usize {
        self.b
    }
}

/// Layer norm over rows of `x`, writing the normalized, scaled output and
/// stashing per-row mean and reciprocal std.
fn ln_forward<F: Real>(
    x: &[F],
    gain: &[F],
    bias: &[F],
    out: &mut [F],
    mean: &mut [F],
    rstd: &mut [F],
    b: usize,
    d: usize,
) {
    let eps = F::of(1e-5);
    let inv_d = F::of(1.0 / d as f64);
    for i in 0..b {
        let row = &x[i * d..(i + 1) * d];
        let mut m = F::zero();
        for &v in row {
            m = m + v;
        }
        m = m * inv_d;
        let mut var = F::zero();
        for &v in row {
            let c = v - m;
            var = c.mul_add(c, var);
        }
        var = var * inv_d;
        let r = (var + eps).sqrt().recip();
        mean[i] = m;
        rstd[i] = r;
        let orow = &mut out[i * d..(i + 1) * d];
        for j in 0..d {
            orow[j] = (row[j] - m) * r * gain[j] + bias[j];
        }
    }
}

/// Recompute a layer-norm output from cached statistics (used in backward).
pub(crate) fn ln_recompute<F: Real>(
    x: &[F],
    gain: &[F],
    bias: &[F],
    mean: &[F],
    rstd: &[F],
    out: &mut [F],
    b: usize,
    d: usize,
) {
    for i in 0..b {
        let row = &x[i * d..(i + 1) * d];
        let orow = &mut out[i * d..(i + 1) * d];
        let (m, r) = (mean[i], rstd[i]);
        for j in 0..d {
            orow[j] = (row[j] - m) * r * gain[j] + bias[j];
        }
    }
}

fn add_bias<F: Real>(y: &mut [F], bias: &[F], b: usize, d: usize) {
    for i in 0..b {
        let row = &mut y[i * d..(i + 1) * d];
        for (v, &bv) in row.iter_mut().zip(bias) {
            *v = *v + bv;
        }
    }
}

/// Summary of a forward pass with labels.
#[derive(Debug, Clone, Copy)]
pub struct BatchOutput {
    pub mean_loss: f64,
    pub correct: usize,
    pub n: usize,
}

impl BatchOutput {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.n as f64
    }
}

/// Forward over a batch of `(a, b, label)` triples through the given task
/// head. With `with_head = false` only the residual stream is produced
/// (logits, probabilities, and loss are skipped).
pub fn forward_batch<F: Real>(
    model: &Model<F>,
    ws: &mut Workspace<F>,
    batch: &[(u32, u32, u32)],
    task: usize,
    with_head: bool,
) -> BatchOutput {
    let b = batch.len();
    assert!(b > 0 && b <= ws.cap, "batch of {b} exceeds workspace capacity {}", ws.cap);
    assert!(task < model.n_tasks);
    let d = model.cfg.d_model;
    let dff = model.cfg.d_ff;
    let vocab = model.cfg.vocab;
    let n_heads = model.cfg.n_heads;
    let dh = d / n_heads;
    let scale = F::of(1.0 / (dh as f64).sqrt());
    ws.b = b;

    // Embedding: x[pos] = tok_emb[token] + pos_emb[pos].
    let tok = model.store.get(model.ids.tok_emb);
    let pos = model.store.get(model.ids.pos_emb);
    for (i, &(a, bb, _)) in batch.iter().enumerate() {
        for (p, t) in [(0usize, a as usize), (1, bb as usize)] {
            let dst = &mut ws.x0[p][i * d..(i + 1) * d];
            let src = &tok[t * d..(t + 1) * d];
            let pe = &pos[p * d..(p + 1) * d];
            for j in 0..d {
                dst[j] = src[j] + pe[j];
            }
        }
    }

    // Split the layer list at each index so the previous layer's output can
    // be read while the current cache is written.
    for li in 0..model.cfg.n_layers {
        let ids = &model.ids.layers[li];
        let (done, rest) = ws.layers.split_at_mut(li);
        let lc = &mut rest[0];
        let x_in: [&[F]; SEQ_LEN] = if li == 0 {
            [&ws.x0[0], &ws.x0[1]]
        } else {
            let prev = &done[li - 1];
            [&prev.x_out[0], &prev.x_out[1]]
        };

        // Attention sublayer.
        for p in 0..SEQ_LEN {
            ln_forward(
                x_in[p],
                model.store.get(ids.ln1_g),
                model.store.get(ids.ln1_b),
                &mut ws.s_d[p],
                &mut lc.ln1_mean[p],
                &mut lc.ln1_rstd[p],
                b,
                d,
            );
            matmul_xw(&ws.s_d[p][..b * d], model.store.get(ids.wq), &mut lc.q[p][..b * d], b, d, d);
            matmul_xw(&ws.s_d[p][..b * d], model.store.get(ids.wk), &mut lc.k[p][..b * d], b, d, d);
            matmul_xw(&ws.s_d[p][..b * d], model.store.get(ids.wv), &mut lc.v[p][..b * d], b, d, d);
        }
        for qp in 0..SEQ_LEN {
            for i in 0..b {
                for h in 0..n_heads {
                    let hs = h * dh;
                    let qrow = &lc.q[qp][i * d + hs..i * d + hs + dh];
                    let mut s = [F::zero(); SEQ_LEN];
                    for (kp, sv) in s.iter_mut().enumerate() {
                        let krow = &lc.k[kp][i * d + hs..i * d + hs + dh];
                        *sv = dot(qrow, krow) * scale;
                    }
                    let m = if s[0] > s[1] { s[0] } else { s[1] };
                    let e0 = (s[0] - m).exp();
                    let e1 = (s[1] - m).exp();
                    let denom = e0 + e1;
                    let a0 = e0 / denom;
                    let a1 = e1 / denom;
                    lc.att[qp][i * n_heads * SEQ_LEN + h * SEQ_LEN] = a0;
                    lc.att[qp][i * n_heads * SEQ_LEN + h * SEQ_LEN + 1] = a1;
                    let c = &mut lc.ctx[qp][i * d + hs..i * d + hs + dh];
                    let v0 = &lc.v[0][i * d + hs..i * d + hs + dh];
                    let v1 = &lc.v[1][i * d + hs..i * d + hs + dh];
                    for j in 0..dh {
                        c[j] = a0 * v0[j] + a1 * v1[j];
                    }
                }
            }
        }
        for p in 0..SEQ_LEN {
            // x_mid = x_in + ctx . Wo
            matmul_xw(&lc.ctx[p][..b * d], model.store.get(ids.wo), &mut ws.s_d[p][..b * d], b, d, d);
            for i in 0..b * d {
                lc.x_mid[p][i] = x_in[p][i] + ws.s_d[p][i];
            }
            // MLP sublayer.
            ln_forward(
                &lc.x_mid[p],
                model.store.get(ids.ln2_g),
                model.store.get(ids.ln2_b),
                &mut ws.s_d[p],
                &mut lc.ln2_mean[p],
                &mut lc.ln2_rstd[p],
                b,
                d,
            );
            matmul_xw(&ws.s_d[p][..b * d], model.store.get(ids.w1), &mut lc.h_pre[p][..b * dff], b, d, dff);
            add_bias(&mut lc.h_pre[p], model.store.get(ids.b1), b, dff);
            for i in 0..b * dff {
                let (v, g) = gelu_and_grad(lc.h_pre[p][i]);
                lc.h_act[p][i] = v;
                lc.h_deriv[p][i] = g;
            }
            matmul_xw(&lc.h_act[p][..b * dff], model.store.get(ids.w2), &mut ws.s_d[p][..b * d], b, dff, d);
            add_bias(&mut ws.s_d[p], model.store.get(ids.b2), b, d);
            for i in 0..b * d {
                lc.x_out[p][i] = lc.x_mid[p][i] + ws.s_d[p][i];
            }
        }
    }

    if !with_head {
        return BatchOutput { mean_loss: 0.0, correct: 0, n: b };
    }

    // Readout from the last position through the task head.
    let last = ws.layers.last().expect("at least one layer");
    ln_forward(
        &last.x_out[SEQ_LEN - 1],
        model.store.get(model.ids.final_ln_g),
        model.store.get(model.ids.final_ln_b),
        &mut ws.final_y,
        &mut ws.final_mean,
        &mut ws.final_rstd,
        b,
        d,
    );
    let (hw, hb) = model.ids.heads[task];
    matmul_xw(&ws.final_y[..b * d], model.store.get(hw), &mut ws.logits[..b * vocab], b, d, vocab);
    add_bias(&mut ws.logits, model.store.get(hb), b, vocab);

    // Stable softmax + cross entropy.
    let mut loss_acc = 0.0f64;
    let mut correct = 0usize;
    for (i, &(_, _, label)) in batch.iter().enumerate() {
        let row = &ws.logits[i * vocab..(i + 1) * vocab];
        let mut m = row[0];
        let mut argmax = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > m {
                m = v;
                argmax = j;
            }
        }
        let mut denom = F::zero();
        for &v in row {
            denom = denom + (v - m).exp();
        }
        let lse = m + denom.ln();
        let prow = &mut ws.probs[i * vocab..(i + 1) * vocab];
        for (j, &v) in row.iter().enumerate() {
            prow[j] = (v - lse).exp();
        }
        loss_acc += (lse - row[label as usize]).as_f64();
        if argmax == label as usize {
            correct += 1;
        }
    }
    BatchOutput { mean_loss: loss_acc / b as f64, correct, n: b }
}

/// Single-input forward: returns (logits, residual at position 0).
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub residual_pos0: Vec<f64>,
}

pub fn forward<F: Real>(model: &Model<F>, a: u32, b: u32, task: usize) -> ForwardOutput {
    let mut ws = Workspace::new(model, 1);
    forward_batch(model, &mut ws, &[(a, b, 0)], task, true);
    let vocab = model.cfg.vocab;
    ForwardOutput {
        logits: ws.logits[..vocab].iter().map(|v| v.as_f64()).collect(),
        residual_pos0: ws.residual_pos0(0).iter().map(|v| v.as_f64()).collect(),
    }
}

/// Accuracy and mean loss over a labeled set, chunked through the workspace.
pub fn batch_accuracy<F: Real>(
    model: &Model<F>,
    ws: &mut Workspace<F>,
    data: &[(u32, u32, u32)],
    task: usize,
) -> BatchOutput {
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    for chunk in data.chunks(ws.cap) {
        let out = forward_batch(model, ws, chunk, task, true);
        correct += out.correct;
        loss += out.mean_loss * chunk.len() as f64;
    }
    BatchOutput { mean_loss: loss / data.len() as f64, correct, n: data.len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn logits_shape_and_softmax_normalization() {
        let cfg = ModelConfig::toy(5);
        let model: Model<f32> = Model::build(&cfg, 1).unwrap();
        let out = forward(&model, 2, 3, 0);
        assert_eq!(out.logits.len(), 5);
        assert_eq!(out.residual_pos0.len(), cfg.d_model);
        assert!(out.logits.iter().all(|v| v.is_finite()));
        let m = out.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = out.logits.iter().map(|v| (v - m).exp()).sum();
        let probs: Vec<f64> = out.logits.iter().map(|v| (v - m).exp() / z).collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hand_computed_single_head_attention() {
        // d_model = 2, 1 head, p = 2: small enough to evaluate by hand.
        let cfg = ModelConfig {
            d_model: 2,
            n_heads: 1,
            d_ff: 2,
            n_layers: 1,
            vocab: 2,
            ..ModelConfig::toy(2)
        };
        let mut model: Model<f64> = Model::build(&cfg, 1).unwrap();
        // Overwrite every parameter with fixed small values.
        let assign: &[(&str, Vec<f64>)] = &[
            ("tok_emb", vec![0.1, -0.2, 0.3, 0.4]),
            ("pos_emb", vec![0.05, 0.1, -0.1, 0.2]),
            ("layer0.ln1.g", vec![1.0, 1.0]),
            ("layer0.ln1.b", vec![0.0, 0.0]),
            ("layer0.attn.wq", vec![0.5, -0.3, 0.2, 0.7]),
            ("layer0.attn.wk", vec![0.4, 0.1, -0.6, 0.3]),
            ("layer0.attn.wv", vec![0.2, 0.5, -0.1, 0.3]),
            ("layer0.attn.wo", vec![0.6, -0.2, 0.1, 0.4]),
            ("layer0.ln2.g", vec![1.0, 1.0]),
            ("layer0.ln2.b", vec![0.0, 0.0]),
            ("layer0.mlp.w1", vec![0.3, -0.4, 0.5, 0.2]),
            ("layer0.mlp.b1", vec![0.01, -0.02]),
            ("layer0.mlp.w2", vec![-0.3, 0.6, 0.2, -0.5]),
            ("layer0.mlp.b2", vec![0.03, 0.04]),
            ("final_ln.g", vec![1.0, 1.0]),
            ("final_ln.b", vec![0.0, 0.0]),
            ("head0.w", vec![0.7, -0.1, 0.2, 0.5]),
            ("head0.b", vec![0.0, 0.1]),
        ];
        for (name, values) in assign {
            let found = model
                .store
                .iter_mut()
                .find(|(n, _)| n == name)
                .unwrap_or_else(|| panic!("missing param {name}"));
            found.1.copy_from_slice(values);
        }

        // Pencil-and-paper forward for input (a, b) = (0, 1).
        let ln = |x: [f64; 2]| -> [f64; 2] {
            let m = (x[0] + x[1]) / 2.0;
            let var = ((x[0] - m).powi(2) + (x[1] - m).powi(2)) / 2.0;
            let r = 1.0 / (var + 1e-5).sqrt();
            [(x[0] - m) * r, (x[1] - m) * r]
        };
        let mv = |x: [f64; 2], w: &[f64]| -> [f64; 2] {
            [x[0] * w[0] + x[1] * w[2], x[0] * w[1] + x[1] * w[3]]
        };
        let x0 = [0.1 + 0.05, -0.2 + 0.1];
        let x1 = [0.3 - 0.1, 0.4 + 0.2];
        let n0 = ln(x0);
        let n1 = ln(x1);
        let wq = &[0.5, -0.3, 0.2, 0.7];
        let wk = &[0.4, 0.1, -0.6, 0.3];
        let wv = &[0.2, 0.5, -0.1, 0.3];
        let wo = &[0.6, -0.2, 0.1, 0.4];
        let (q0, q1) = (mv(n0, wq), mv(n1, wq));
        let (k0, k1) = (mv(n0, wk), mv(n1, wk));
        let (v0, v1) = (mv(n0, wv), mv(n1, wv));
        let scale = 1.0 / 2.0f64.sqrt();
        let att_row = |q: [f64; 2]| -> [f64; 2] {
            let s0 = (q[0] * k0[0] + q[1] * k0[1]) * scale;
            let s1 = (q[0] * k1[0] + q[1] * k1[1]) * scale;
            let m = s0.max(s1);
            let e0 = (s0 - m).exp();
            let e1 = (s1 - m).exp();
            [e0 / (e0 + e1), e1 / (e0 + e1)]
        };
        let (a0w, a1w) = (att_row(q0), att_row(q1));
        let ctx0 = [a0w[0] * v0[0] + a0w[1] * v1[0], a0w[0] * v0[1] + a0w[1] * v1[1]];
        let ctx1 = [a1w[0] * v0[0] + a1w[1] * v1[0], a1w[0] * v0[1] + a1w[1] * v1[1]];
        let o0 = mv(ctx0, wo);
        let o1 = mv(ctx1, wo);
        let xm0 = [x0[0] + o0[0], x0[1] + o0[1]];
        let xm1 = [x1[0] + o1[0], x1[1] + o1[1]];
        let mlp = |x: [f64; 2]| -> [f64; 2] {
            let n = ln(x);
            let h = [
                n[0] * 0.3 + n[1] * 0.5 + 0.01,
                n[0] * -0.4 + n[1] * 0.2 - 0.02,
            ];
            let g = [gelu(h[0]), gelu(h[1])];
            [g[0] * -0.3 + g[1] * 0.2 + 0.03, g[0] * 0.6 + g[1] * -0.5 + 0.04]
        };
        let m0 = mlp(xm0);
        let m1 = mlp(xm1);
        let xo0 = [xm0[0] + m0[0], xm0[1] + m0[1]];
        let xo1 = [xm1[0] + m1[0], xm1[1] + m1[1]];
        let yf = ln(xo1);
        let expect_logits =
            [yf[0] * 0.7 + yf[1] * 0.2, yf[0] * -0.1 + yf[1] * 0.5 + 0.1];

        let out = forward(&model, 0, 1, 0);
        assert!((out.residual_pos0[0] - xo0[0]).abs() < 1e-5, "{:?} vs {xo0:?}", out.residual_pos0);
        assert!((out.residual_pos0[1] - xo0[1]).abs() < 1e-5);
        assert!((out.logits[0] - expect_logits[0]).abs() < 1e-5);
        assert!((out.logits[1] - expect_logits[1]).abs() < 1e-5);
    }
}
