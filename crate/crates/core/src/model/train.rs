//! Training loop: full-batch (default) or seeded minibatch steps, grokking
//! detection, and streaming of per-step attention updates to a sink.
//!
//! The grok step of a task is the first evaluation step whose test accuracy
//! exceeds 0.95 and stays above 0.95 for the rest of the run; it is resolved
//! at the end. Live "crossing" events carry the provisional version (first
//! current crossing, re-armed if accuracy later dips).

use super::{
    adamw_step, backward, batch_accuracy, forward_batch, AdamState, AttnVector, BatchMode, Grads,
    Model, ModelConfig, Real, Workspace,
};
use crate::groupmath::{Dataset, TaskSpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("model build failed: {0}")]
    Build(String),
    #[error("loss diverged to {loss} at step {step}")]
    Diverged { step: usize, loss: f64 },
    #[error("sink error: {0}")]
    Sink(#[from] Box<dyn std::error::Error + Send + Sync>),
}

/// Per-task accuracy/loss snapshot at one evaluation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskEval {
    pub train_acc: f64,
    pub test_acc: f64,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// One metrics row: evaluation results for every task at a step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub evals: Vec<TaskEval>,
}

/// Post-update context streamed to the sink every step.
pub struct StepCtx<'a, F: Real> {
    pub step: usize,
    pub losses: &'a [f64],
    pub delta_attn: &'a AttnVector,
    pub model: &'a Model<F>,
    pub opt: &'a AdamState<F>,
}

/// Evaluation context at metric steps.
pub struct EvalCtx<'a, F: Real> {
    pub record: &'a TrainRecord,
    pub model: &'a Model<F>,
    pub opt: &'a AdamState<F>,
    /// Provisional grok crossings per task (first step with test acc > 0.95,
    /// re-armed on dips).
    pub crossings: &'a [Option<usize>],
}

/// Receiver for the training stream. Implementations persist metrics,
/// checkpoints, and spectra; they may process snapshots concurrently but the
/// loop itself is single-writer.
pub trait TrainSink<F: Real> {
    fn on_step(&mut self, ctx: StepCtx<'_, F>) -> Result<(), Box<dyn std::error::Error + Send + Sync>>;
    fn on_eval(&mut self, ctx: EvalCtx<'_, F>) -> Result<(), Box<dyn std::error::Error + Send + Sync>>;
}

/// A sink that drops everything (tests, calibration runs).
pub struct NullSink;

impl<F: Real> TrainSink<F> for NullSink {
    fn on_step(&mut self, _: StepCtx<'_, F>) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
        Ok(())
    }
    fn on_eval(&mut self, _: EvalCtx<'_, F>) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    /// Evaluate train/test accuracy every this many steps.
    pub eval_every: usize,
    /// Stop this many steps after every task has a provisional crossing.
    pub stop_margin: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { eval_every: 10, stop_margin: None }
    }
}

/// Prior state when resuming a run from a checkpoint.
pub struct ResumeState<F: Real> {
    pub model: Model<F>,
    pub opt: AdamState<F>,
    pub start_step: usize,
    pub history: Vec<TrainRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_step: usize,
    /// Definitive grok step per task: first eval step with test accuracy
    /// > 0.95 that stays above 0.95 through the end of the run.
    pub grok_steps: Vec<Option<usize>>,
    pub history: Vec<TrainRecord>,
}

/// Train a (possibly multitask) model. Each step computes every task's loss
/// on its own batch, sums the gradients, and applies one AdamW update.
pub fn train_run<F: Real>(
    cfg: &ModelConfig,
    tasks: &[TaskSpec],
    datasets: &[Dataset],
    resume: Option<ResumeState<F>>,
    opts: TrainOptions,
    sink: &mut dyn TrainSink<F>,
) -> Result<(Model<F>, AdamState<F>, TrainOutcome), TrainError> {
    assert_eq!(tasks.len(), datasets.len());
    let (mut model, mut opt, start_step, mut history) = match resume {
        Some(r) => (r.model, r.opt, r.start_step, r.history),
        None => {
            let model = Model::build(cfg, tasks.len()).map_err(TrainError::Build)?;
            let opt = AdamState::new(&model);
            (model, opt, 0, Vec::new())
        }
    };

    let max_batch = match cfg.batch_mode {
        BatchMode::Full => datasets.iter().map(|d| d.train().len()).max().unwrap(),
        BatchMode::Minibatch(n) => n,
    };
    let eval_cap = datasets.iter().map(|d| d.train().len().max(d.test().len())).max().unwrap();
    let mut ws = Workspace::new(&model, max_batch.max(eval_cap.min(4096)).max(1));
    let mut grads = Grads::zeros(&model);
    let mut delta = AttnVector::zeros(model.layout());
    let mut losses = vec![0.0f64; tasks.len()];
    let mut minibatch: Vec<(u32, u32, u32)> = Vec::new();

    // Rebuild provisional crossings from resumed history.
    let mut crossings: Vec<Option<usize>> = vec![None; tasks.len()];
    for rec in &history {
        for (t, ev) in rec.evals.iter().enumerate() {
            if ev.test_acc > 0.95 {
                if crossings[t].is_none() {
                    crossings[t] = Some(rec.step);
                }
            } else {
                crossings[t] = None;
            }
        }
    }

    let mut step = start_step;
    while step < cfg.max_steps {
        step += 1;
        grads.zero_all();
        for (t, ds) in datasets.iter().enumerate() {
            let batch: &[(u32, u32, u32)] = match cfg.batch_mode {
                BatchMode::Full => ds.train(),
                BatchMode::Minibatch(n) => {
                    // Stateless per-step shuffle keyed on (seed, step, task):
                    // resumable without RNG state.
                    let key = cfg
                        .seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add((step as u64) << 8)
                        .wrapping_add(t as u64);
                    let mut rng = ChaCha8Rng::seed_from_u64(key);
                    minibatch.clear();
                    minibatch.extend(
                        ds.train().choose_multiple(&mut rng, n.min(ds.train().len())).copied(),
                    );
                    &minibatch
                }
            };
            let out = forward_batch(&model, &mut ws, batch, t, true);
            if !out.mean_loss.is_finite() {
                return Err(TrainError::Diverged { step, loss: out.mean_loss });
            }
            losses[t] = out.mean_loss;
            backward(&model, &mut ws, batch, t, &mut grads);
        }
        adamw_step(&mut model, &grads, &mut opt, &mut delta);
        sink.on_step(StepCtx { step, losses: &losses, delta_attn: &delta, model: &model, opt: &opt })?;

        let stop_now = match (opts.stop_margin, crossings.iter().copied().collect::<Option<Vec<_>>>()) {
            (Some(margin), Some(cr)) => {
                let latest = cr.into_iter().max().unwrap();
                step >= latest + margin
            }
            _ => false,
        };
        let last_step = step == cfg.max_steps || stop_now;

        if step % opts.eval_every == 0 || last_step {
            let mut evals = Vec::with_capacity(tasks.len());
            for (t, ds) in datasets.iter().enumerate() {
                let tr = batch_accuracy(&model, &mut ws, ds.train(), t);
                let te = batch_accuracy(&model, &mut ws, ds.test(), t);
                evals.push(TaskEval {
                    train_acc: tr.accuracy(),
                    test_acc: te.accuracy(),
                    train_loss: tr.mean_loss,
                    test_loss: te.mean_loss,
                });
            }
            for (t, ev) in evals.iter().enumerate() {
                if ev.test_acc > 0.95 {
                    if crossings[t].is_none() {
                        crossings[t] = Some(step);
                    }
                } else {
                    crossings[t] = None;
                }
            }
            let record = TrainRecord { step, evals };
            history.push(record);
            let record = history.last().unwrap();
            sink.on_eval(EvalCtx { record, model: &model, opt: &opt, crossings: &crossings })?;
        }
        if last_step {
            break;
        }
    }

    let grok_steps = resolve_grok_steps(&history, tasks.len());
    let outcome = TrainOutcome { final_step: step, grok_steps, history };
    Ok((model, opt, outcome))
}

/// First eval step per task whose test accuracy stays above 0.95 to the end.
pub fn resolve_grok_steps(history: &[TrainRecord], n_tasks: usize) -> Vec<Option<usize>> {
    (0..n_tasks)
        .map(|t| {
            let mut candidate = None;
            for rec in history {
                let acc = rec.evals[t].test_acc;
                if acc > 0.95 {
                    if candidate.is_none() {
                        candidate = Some(rec.step);
                    }
                } else {
                    candidate = None;
                }
            }
            candidate
        })
        .collect()
}
