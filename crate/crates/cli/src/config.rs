//! Run configuration: a flat key = value TOML file. Defaults match the
//! standard experiment (p = 97, AdamW lr 1e-3, beta2 0.98, full batch).

use grokspectra::groupmath::{OpKind, TaskSpec};
use grokspectra::model::{BatchMode, ModelConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// One op per task head; more than one means a shared-trunk model.
    pub ops: Vec<String>,
    #[serde(default = "default_p")]
    pub p: u32,
    #[serde(default = "default_wd")]
    pub wd: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// "full" or "minibatch".
    #[serde(default = "default_batch_mode")]
    pub batch_mode: String,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Stop this many steps after the last task's provisional grok crossing;
    /// 0 runs the full budget.
    #[serde(default)]
    pub stop_margin: usize,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Gram spectrum cadence in steps.
    #[serde(default = "default_gram_every")]
    pub gram_every: usize,
    /// Displacement snapshot cadence in steps.
    #[serde(default = "default_disp_every")]
    pub disp_every: usize,
    /// Directions saved per forced save.
    #[serde(default = "default_n_directions")]
    pub n_directions: usize,
}

fn default_p() -> u32 {
    97
}
fn default_wd() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    42
}
fn default_max_steps() -> usize {
    20_000
}
fn default_batch_mode() -> String {
    "full".to_string()
}
fn default_batch_size() -> usize {
    512
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.98
}
fn default_eval_every() -> usize {
    10
}
fn default_checkpoint_every() -> usize {
    100
}
fn default_gram_every() -> usize {
    100
}
fn default_disp_every() -> usize {
    500
}
fn default_n_directions() -> usize {
    8
}

impl RunConfig {
    pub fn tasks(&self) -> anyhow::Result<Vec<TaskSpec>> {
        self.ops
            .iter()
            .map(|name| {
                let op = OpKind::parse(name)
                    .ok_or_else(|| anyhow::anyhow!("unknown op '{name}'"))?;
                Ok(TaskSpec::new(op, self.p).map_err(|e| anyhow::anyhow!("{e}"))?)
            })
            .collect()
    }

    pub fn model_config(&self) -> anyhow::Result<ModelConfig> {
        let batch_mode = match self.batch_mode.as_str() {
            "full" => BatchMode::Full,
            "minibatch" => BatchMode::Minibatch(self.batch_size),
            other => anyhow::bail!("batch_mode must be 'full' or 'minibatch', got '{other}'"),
        };
        let mut cfg = ModelConfig::standard(self.p);
        cfg.lr = self.lr;
        cfg.wd = self.wd;
        cfg.beta1 = self.beta1;
        cfg.beta2 = self.beta2;
        cfg.seed = self.seed;
        cfg.max_steps = self.max_steps;
        cfg.batch_mode = batch_mode;
        cfg.warmup_steps = self.warmup_steps;
        cfg.validate().map_err(|e| anyhow::anyhow!(e))?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> anyhow::Result<RunConfig> {
        Ok(toml::from_str(text)?)
    }

    pub fn serialize(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Canonical single-task config.
    pub fn single(op: OpKind, wd: f64, seed: u64, max_steps: usize) -> RunConfig {
        RunConfig {
            name: format!("{}_wd{}_s{}", op.name(), wd, seed),
            ops: vec![op.name().to_string()],
            p: default_p(),
            wd,
            seed,
            max_steps,
            batch_mode: default_batch_mode(),
            batch_size: default_batch_size(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            warmup_steps: 0,
            eval_every: default_eval_every(),
            stop_margin: 0,
            checkpoint_every: default_checkpoint_every(),
            gram_every: default_gram_every(),
            disp_every: default_disp_every(),
            n_directions: default_n_directions(),
        }
    }
}
