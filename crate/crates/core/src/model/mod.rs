//! The 2-layer pre-norm transformer used for every experiment, with manual
//! reverse-mode gradients, AdamW, and attention-parameter flattening.
//!
//! The architecture is fixed by construction: token + position embeddings
//! over a 2-token input `[a, b]`, two blocks of pre-norm multihead attention
//! and pre-norm GELU MLP, a final norm, and one linear classification head
//! per task. Logits are read at the last position; the analysis-side residual
//! is read at position 0 after the second block, before the final norm.
//!
//! Training arithmetic is `f32`; the same code monomorphizes to `f64` for
//! gradient-check tests.

mod adamw;
mod backward;
#[doc(hidden)]
pub mod benchhooks;
mod checkpoint;
mod forward;
pub(crate) mod gemm;
mod train;

pub use adamw::{adamw_step, AdamState};
pub use backward::{backward, Grads};
pub use benchhooks::{
    gelu_grad_all as bench_gelu_grad_all, matmul_xt_dy as bench_matmul_xt_dy,
    matmul_xw as bench_matmul_xw, transpose_into as bench_transpose_into,
};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointData, CheckpointError};
pub use forward::{batch_accuracy, forward, forward_batch, BatchOutput, ForwardOutput, Workspace};
pub use train::{
    resolve_grok_steps, train_run, EvalCtx, NullSink, ResumeState, StepCtx, TaskEval, TrainError,
    TrainOptions, TrainOutcome, TrainRecord, TrainSink,
};

use crate::groupmath::TaskSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Scalar type for model arithmetic. `f32` is the training mode; `f64` exists
/// for finite-difference gradient verification.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite value")
    }
    fn as_f32(self) -> f32 {
        self.to_f32().expect("finite value")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Sequence length: the input is the token pair `[a, b]`.
pub const SEQ_LEN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// One step = one pass over the full training split (the default).
    Full,
    /// Seeded shuffled minibatches of the given size.
    Minibatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    /// Vocabulary and class count: the task modulus p.
    pub vocab: usize,
    pub lr: f64,
    pub wd: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub max_steps: usize,
    pub batch_mode: BatchMode,
    /// Linear learning-rate warmup steps (0 = no warmup).
    pub warmup_steps: usize,
}

impl ModelConfig {
    /// The paper-scale configuration: d_model 128, 4 heads, d_ff 256, ~290k
    /// parameters for a single task at p = 97.
    pub fn standard(p: u32) -> ModelConfig {
        ModelConfig {
            d_model: 128,
            n_heads: 4,
            d_ff: 256,
            n_layers: 2,
            vocab: p as usize,
            lr: 1e-3,
            wd: 1.0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            seed: 42,
            max_steps: 20_000,
            batch_mode: BatchMode::Full,
            warmup_steps: 0,
        }
    }

    /// Tiny configuration for fast tests.
    pub fn toy(p: u32) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_layers: 2,
            vocab: p as usize,
            lr: 1e-3,
            wd: 0.1,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            seed: 42,
            max_steps: 2000,
            batch_mode: BatchMode::Full,
            warmup_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.n_layers == 0 {
            return Err("dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return Err(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.wd < 0.0 {
            return Err("weight decay must be nonnegative".into());
        }
        if let BatchMode::Minibatch(0) = self.batch_mode {
            return Err("minibatch size must be positive".into());
        }
        Ok(())
    }
}

/// Shared-trunk multitask configuration: one classification head per task,
/// all tasks over the same modulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskConfig {
    pub tasks: Vec<TaskSpec>,
    pub model: ModelConfig,
}

impl MultiTaskConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.model.validate()?;
        if self.tasks.is_empty() {
            return Err("need at least one task".into());
        }
        let p = self.tasks[0].modulus;
        if self.tasks.iter().any(|t| t.modulus != p) {
            return Err("all tasks must share the same modulus".into());
        }
        if self.model.vocab != p as usize {
            return Err("vocab must equal the task modulus".into());
        }
        Ok(())
    }
}

/// Handle into the parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named parameter buffers. Iteration order is registration order
/// and is the canonical order for the optimizer, checkpoints, and flattening.
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    entries: Vec<(String, Vec<F>)>,
}

impl<F: Real> ParamStore<F> {
    fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    fn add(&mut self, name: impl Into<String>, data: Vec<F>) -> ParamId {
        self.entries.push((name.into(), data));
        ParamId(self.entries.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[F] {
        &self.entries[id.0].1
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.entries[id.0].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[F])> {
        self.entries.iter().map(|(n, d)| (n.as_str(), d.as_slice()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Vec<F>)> {
        self.entries.iter_mut().map(|(n, d)| (n.as_str(), d))
    }

    pub fn by_name(&self, name: &str) -> Option<&[F]> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, d)| d.as_slice())
    }

    pub(crate) fn buf_mut_by_index(&mut self, i: usize) -> &mut [F] {
        &mut self.entries[i].1
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, d)| d.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerIds {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamIds {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<LayerIds>,
    pub final_ln_g: ParamId,
    pub final_ln_b: ParamId,
    /// (weights, bias) per task head.
    pub heads: Vec<(ParamId, ParamId)>,
}

/// A built model: configuration plus its parameter store.
#[derive(Debug, Clone)]
pub struct Model<F: Real> {
    pub cfg: ModelConfig,
    pub n_tasks: usize,
    pub(crate) store: ParamStore<F>,
    pub(crate) ids: ParamIds,
}

impl<F: Real> Model<F> {
    /// Deterministically initialized model: scaled-normal projections with
    /// std d_model^(-1/2), zero biases and norm offsets, unit norm gains.
    pub fn build(cfg: &ModelConfig, n_tasks: usize) -> Result<Model<F>, String> {
        cfg.validate()?;
        if n_tasks == 0 {
            return Err("need at least one task head".into());
        }
        let d = cfg.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0f64, (d as f64).powf(-0.5)).unwrap();
        let mut draw = |n: usize| -> Vec<F> {
            (0..n).map(|_| F::of(normal.sample(&mut rng))).collect()
        };

        let mut store = ParamStore::new();
        let tok_emb = store.add("tok_emb", draw(cfg.vocab * d));
        let pos_emb = store.add("pos_emb", draw(SEQ_LEN * d));
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let ids = LayerIds {
                ln1_g: store.add(format!("layer{l}.ln1.g"), vec![F::one(); d]),
                ln1_b: store.add(format!("layer{l}.ln1.b"), vec![F::zero(); d]),
                wq: store.add(format!("layer{l}.attn.wq"), draw(d * d)),
                wk: store.add(format!("layer{l}.attn.wk"), draw(d * d)),
                wv: store.add(format!("layer{l}.attn.wv"), draw(d * d)),
                wo: store.add(format!("layer{l}.attn.wo"), draw(d * d)),
                ln2_g: store.add(format!("layer{l}.ln2.g"), vec![F::one(); d]),
                ln2_b: store.add(format!("layer{l}.ln2.b"), vec![F::zero(); d]),
                w1: store.add(format!("layer{l}.mlp.w1"), draw(d * cfg.d_ff)),
                b1: store.add(format!("layer{l}.mlp.b1"), vec![F::zero(); cfg.d_ff]),
                w2: store.add(format!("layer{l}.mlp.w2"), draw(cfg.d_ff * d)),
                b2: store.add(format!("layer{l}.mlp.b2"), vec![F::zero(); d]),
            };
            layers.push(ids);
        }
        let final_ln_g = store.add("final_ln.g", vec![F::one(); d]);
        let final_ln_b = store.add("final_ln.b", vec![F::zero(); d]);
        let mut heads = Vec::with_capacity(n_tasks);
        for t in 0..n_tasks {
            let w = store.add(format!("head{t}.w"), draw(d * cfg.vocab));
            let b = store.add(format!("head{t}.b"), vec![F::zero(); cfg.vocab]);
            heads.push((w, b));
        }

        Ok(Model {
            cfg: *cfg,
            n_tasks,
            store,
            ids: ParamIds { tok_emb, pos_emb, layers, final_ln_g, final_ln_b, heads },
        })
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.total_len()
    }

    pub fn layout(&self) -> AttnLayout {
        AttnLayout {
            n_layers: self.cfg.n_layers,
            d_model: self.cfg.d_model,
            n_heads: self.cfg.n_heads,
        }
    }

    /// Number of attention parameters (the flattened dimension D).
    pub fn attn_param_count(&self) -> usize {
        self.layout().dim()
    }

    /// Flatten the attention parameters in block order.
    pub fn flatten_attn(&self) -> AttnVector {
        let layout = self.layout();
        let mut data = Vec::with_capacity(layout.dim());
        self.flatten_attn_into(&mut data);
        AttnVector { layout, data }
    }

    /// Flatten into an existing buffer, reusing its allocation.
    pub fn flatten_attn_into(&self, out: &mut Vec<f32>) {
        out.clear();
        for l in &self.ids.layers {
            for id in [l.wq, l.wk, l.wv, l.wo] {
                out.extend(self.store.get(id).iter().map(|v| v.as_f32()));
            }
        }
    }

    /// Write a flat attention vector back into the parameter blocks.
    pub fn unflatten_attn(&mut self, v: &AttnVector) {
        assert_eq!(v.data.len(), self.attn_param_count());
        let mut off = 0;
        for li in 0..self.ids.layers.len() {
            let l = self.ids.layers[li].clone();
            for id in [l.wq, l.wk, l.wv, l.wo] {
                let dst = self.store.get_mut(id);
                let n = dst.len();
                for (d, &s) in dst.iter_mut().zip(&v.data[off..off + n]) {
                    *d = F::of(s as f64);
                }
                off += n;
            }
        }
    }

    /// Euclidean norm of the flattened attention parameters.
    pub fn attn_norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for l in &self.ids.layers {
            for id in [l.wq, l.wk, l.wv, l.wo] {
                for v in self.store.get(id) {
                    let x = v.as_f64();
                    acc += x * x;
                }
            }
        }
        acc.sqrt()
    }

    /// Add `scale * v` to the attention parameters in place.
    pub fn add_attn(&mut self, v: &AttnVector, scale: f64) {
        assert_eq!(v.data.len(), self.attn_param_count());
        let mut off = 0;
        for li in 0..self.ids.layers.len() {
            let l = self.ids.layers[li].clone();
            for id in [l.wq, l.wk, l.wv, l.wo] {
                let dst = self.store.get_mut(id);
                let n = dst.len();
                for (d, &s) in dst.iter_mut().zip(&v.data[off..off + n]) {
                    *d = *d + F::of(scale * s as f64);
                }
                off += n;
            }
        }
    }
}

/// Which attention matrix a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnMat {
    Q,
    K,
    V,
    O,
}

impl AttnMat {
    pub const ALL: [AttnMat; 4] = [AttnMat::Q, AttnMat::K, AttnMat::V, AttnMat::O];

    pub fn name(self) -> &'static str {
        match self {
            AttnMat::Q => "Q",
            AttnMat::K => "K",
            AttnMat::V => "V",
            AttnMat::O => "O",
        }
    }

    fn index(self) -> usize {
        match self {
            AttnMat::Q => 0,
            AttnMat::K => 1,
            AttnMat::V => 2,
            AttnMat::O => 3,
        }
    }
}

/// Index map for the flattened attention-parameter space: per layer the four
/// d x d matrices Q, K, V, O, each row-major, concatenated in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnLayout {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
}

impl AttnLayout {
    /// Flattened dimension D = n_layers * 4 * d_model^2.
    pub fn dim(&self) -> usize {
        self.n_layers * 4 * self.d_model * self.d_model
    }

    /// Index range of one (layer, matrix) block.
    pub fn block_range(&self, layer: usize, mat: AttnMat) -> std::ops::Range<usize> {
        let block = self.d_model * self.d_model;
        let start = (layer * 4 + mat.index()) * block;
        start..start + block
    }

    /// Squared mass of `data` inside one (layer, head) cell: the head's
    /// column slices of Q/K/V plus its row slice of O.
    pub fn head_mass(&self, data: &[f32], layer: usize, head: usize) -> f64 {
        let d = self.d_model;
        let dh = d / self.n_heads;
        let lo = head * dh;
        let hi = lo + dh;
        let mut acc = 0.0f64;
        for mat in [AttnMat::Q, AttnMat::K, AttnMat::V] {
            let block = &data[self.block_range(layer, mat)];
            for r in 0..d {
                for c in lo..hi {
                    let v = block[r * d + c] as f64;
                    acc += v * v;
                }
            }
        }
        let block = &data[self.block_range(layer, AttnMat::O)];
        for r in lo..hi {
            for c in 0..d {
                let v = block[r * d + c] as f64;
                acc += v * v;
            }
        }
        acc
    }

    /// Squared mass inside one (layer, head, matrix) block.
    pub fn head_mat_mass(&self, data: &[f32], layer: usize, head: usize, mat: AttnMat) -> f64 {
        let d = self.d_model;
        let dh = d / self.n_heads;
        let lo = head * dh;
        let hi = lo + dh;
        let block = &data[self.block_range(layer, mat)];
        let mut acc = 0.0f64;
        match mat {
            AttnMat::O => {
                for r in lo..hi {
                    for c in 0..d {
                        let v = block[r * d + c] as f64;
                        acc += v * v;
                    }
                }
            }
            _ => {
                for r in 0..d {
                    for c in lo..hi {
                        let v = block[r * d + c] as f64;
                        acc += v * v;
                    }
                }
            }
        }
        acc
    }
}

/// A flattened attention-parameter vector together with its index map.
#[derive(Debug, Clone)]
pub struct AttnVector {
    pub layout: AttnLayout,
    pub data: Vec<f32>,
}

impl AttnVector {
    pub fn zeros(layout: AttnLayout) -> AttnVector {
        AttnVector { layout, data: vec![0.0; layout.dim()] }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &AttnVector) -> f64 {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a as f64 * b as f64).sum()
    }

    /// Rescale to unit norm; errors on the zero vector.
    pub fn normalized(mut self) -> Result<AttnVector, &'static str> {
        let n = self.norm();
        if !(n > 0.0) {
            return Err("cannot normalize a zero vector");
        }
        for v in &mut self.data {
            *v = (*v as f64 / n) as f32;
        }
        Ok(self)
    }
}
