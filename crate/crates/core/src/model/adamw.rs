//! AdamW with decoupled weight decay. The update returns the step's change
//! to the attention parameters, which is what the spectral machinery tracks.

use super::{AttnVector, Grads, Model, Real};

/// First and second moments, parallel to the parameter store.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub step: usize,
    pub(crate) m: Vec<Vec<F>>,
    pub(crate) v: Vec<Vec<F>>,
    prev_attn: Vec<f32>,
}

impl<F: Real> AdamState<F> {
    pub fn new(model: &Model<F>) -> AdamState<F> {
        AdamState {
            step: 0,
            m: model.store.iter().map(|(_, d)| vec![F::zero(); d.len()]).collect(),
            v: model.store.iter().map(|(_, d)| vec![F::zero(); d.len()]).collect(),
            prev_attn: vec![0.0; model.attn_param_count()],
        }
    }

    pub(crate) fn moment_sections(&self, model: &Model<F>) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::new();
        for (i, (name, _)) in model.store.iter().enumerate() {
            out.push((format!("adam.m.{name}"), self.m[i].iter().map(|v| v.as_f32()).collect()));
            out.push((format!("adam.v.{name}"), self.v[i].iter().map(|v| v.as_f32()).collect()));
        }
        out
    }

    pub(crate) fn load_moment_sections(
        &mut self,
        model: &Model<F>,
        sections: &[(String, Vec<f32>)],
    ) -> Result<(), String> {
        for (i, (name, _)) in model.store.iter().enumerate() {
            for (dst, key) in
                [(&mut self.m[i], format!("adam.m.{name}")), (&mut self.v[i], format!("adam.v.{name}"))]
            {
                let src = sections
                    .iter()
                    .find(|(n, _)| *n == key)
                    .map(|(_, d)| d)
                    .ok_or_else(|| format!("missing optimizer section {key}"))?;
                if src.len() != dst.len() {
                    return Err(format!("optimizer section {key} has wrong length"));
                }
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = F::of(s as f64);
                }
            }
        }
        Ok(())
    }
}

/// One AdamW step. Weight decay is decoupled: `theta -= lr * wd * theta`
/// applied additively with the Adam step, on every parameter. Writes
/// `theta_t - theta_{t-1}` restricted to attention parameters into `delta`.
pub fn adamw_step<F: Real>(
    model: &mut Model<F>,
    grads: &Grads<F>,
    opt: &mut AdamState<F>,
    delta: &mut AttnVector,
) {
    opt.step += 1;
    let t = opt.step;
    let cfg = model.cfg;
    let lr = if cfg.warmup_steps > 0 && t <= cfg.warmup_steps {
        cfg.lr * t as f64 / cfg.warmup_steps as f64
    } else {
        cfg.lr
    };
    let beta1 = F::of(cfg.beta1);
    let beta2 = F::of(cfg.beta2);
    let one_m_b1 = F::of(1.0 - cfg.beta1);
    let one_m_b2 = F::of(1.0 - cfg.beta2);
    let bc1 = F::of(1.0 / (1.0 - cfg.beta1.powi(t as i32)));
    let bc2 = F::of(1.0 / (1.0 - cfg.beta2.powi(t as i32)));
    let lr_f = F::of(lr);
    let wd_f = F::of(lr * cfg.wd);
    let eps = F::of(cfg.eps);

    model.flatten_attn_into(&mut opt.prev_attn);

    for i in 0..model.store.len() {
        let g = grads.by_index(i);
        let m = &mut opt.m[i];
        let v = &mut opt.v[i];
        let theta = model.store.buf_mut_by_index(i);
        for j in 0..theta.len() {
            let gj = g[j];
            m[j] = beta1 * m[j] + one_m_b1 * gj;
            v[j] = beta2 * v[j] + one_m_b2 * gj * gj;
            let mhat = m[j] * bc1;
            let vhat = v[j] * bc2;
            theta[j] = theta[j] - lr_f * (mhat / (vhat.sqrt() + eps)) - wd_f * theta[j];
        }
    }

    model.flatten_attn_into(&mut delta.data);
    for (d, &prev) in delta.data.iter_mut().zip(&opt.prev_attn) {
        *d -= prev;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut cfg = ModelConfig::toy(5);
        cfg.wd = 0.0;
        let mut model: Model<f32> = Model::build(&cfg, 1).unwrap();
        let before = model.flatten_attn();
        let norm_before: f64 = model.params().iter().flat_map(|(_, d)| d).map(|&v| v as f64 * v as f64).sum();
        let grads = Grads::zeros(&model);
        let mut opt = AdamState::new(&model);
        let mut delta = AttnVector::zeros(model.layout());
        adamw_step(&mut model, &grads, &mut opt, &mut delta);
        let after = model.flatten_attn();
        assert_eq!(before.data, after.data);
        assert!(delta.data.iter().all(|&v| v == 0.0));
        let norm_after: f64 = model.params().iter().flat_map(|(_, d)| d).map(|&v| v as f64 * v as f64).sum();
        assert_eq!(norm_before, norm_after);
    }

    #[test]
    fn zero_grad_decay_shrinks_by_factor() {
        let mut cfg = ModelConfig::toy(5);
        cfg.wd = 1.0;
        cfg.lr = 1e-3;
        let mut model: Model<f64> = Model::build(&cfg, 1).unwrap();
        let before: Vec<Vec<f64>> =
            model.params().iter().map(|(_, d)| d.to_vec()).collect();
        let grads = Grads::zeros(&model);
        let mut opt = AdamState::new(&model);
        let mut delta = AttnVector::zeros(model.layout());
        adamw_step(&mut model, &grads, &mut opt, &mut delta);
        adamw_step(&mut model, &grads, &mut opt, &mut delta);
        let factor = (1.0 - 1e-3f64).powi(2);
        for (prev, (_, after)) in before.iter().zip(model.params().iter()) {
            for (&a, &b) in prev.iter().zip(after) {
                assert!((b - a * factor).abs() < 1e-12 * a.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn scalar_recurrence_matches_hand_derivation() {
        // Single effective scalar: follow one parameter with constant grad 1.
        let cfg = ModelConfig {
            wd: 0.5,
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            ..ModelConfig::toy(5)
        };
        let mut model: Model<f64> = Model::build(&cfg, 1).unwrap();
        let theta0 = model.params().get(model.ids.tok_emb)[0];
        let mut grads = Grads::zeros(&model);
        grads.get_mut(model.ids.tok_emb)[0] = 1.0;
        let mut opt = AdamState::new(&model);
        let mut delta = AttnVector::zeros(model.layout());

        // Hand recurrence in plain f64.
        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, theta0);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * 1.0;
            v = 0.98 * v + 0.02 * 1.0;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.98f64.powi(t));
            theta = theta - 0.1 * (mhat / (vhat.sqrt() + 1e-8)) - 0.1 * 0.5 * theta;
        }
        adamw_step(&mut model, &grads, &mut opt, &mut delta);
        adamw_step(&mut model, &grads, &mut opt, &mut delta);
        let got = model.params().get(model.ids.tok_emb)[0];
        assert!((got - theta).abs() < 1e-10, "{got} vs {theta}");
    }
}
