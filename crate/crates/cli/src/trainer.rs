//! Training driver: wires the core training loop into a run directory.
//! Streams metrics and Gram spectra, snapshots displacements, saves model and
//! resume checkpoints, and persists edge directions around grok crossings.

use crate::config::RunConfig;
use crate::rundir::{
    read_checkpoint_file, truncate_csv_to_step, write_checkpoint_file, write_summary,
    CsvAppender, MetricsCsv, RunDir, RunSummary,
};
use anyhow::{bail, Context, Result};
use grokspectra::groupmath::{make_dataset, Dataset, TaskSpec};
use grokspectra::model::{
    AdamState, CheckpointData, EvalCtx, Model, ResumeState, StepCtx, TrainOptions, TrainSink,
};
use grokspectra::spectral::{
    edge_directions, gram_spectrum, DisplacementTracker, GapSeries, UpdateWindow, WINDOW,
};
use std::collections::BTreeSet;
use std::fs;
use std::time::Instant;

/// Extra steps of dense Gram sampling after a detected grok crossing.
const DENSE_AFTER_CROSSING: usize = 200;

pub struct RunSink<'a> {
    cfg: &'a RunConfig,
    dir: &'a RunDir,
    window: UpdateWindow,
    gram_csv: CsvAppender,
    metrics_csv: CsvAppender,
    disp: DisplacementTracker,
    dense_until: usize,
    direction_saves: BTreeSet<usize>,
    crossed: Vec<bool>,
    started: Instant,
    pub last_logged: Instant,
}

impl<'a> RunSink<'a> {
    pub fn new(
        cfg: &'a RunConfig,
        dir: &'a RunDir,
        n_tasks: usize,
        initial_model: &Model<f32>,
    ) -> Result<RunSink<'a>> {
        let gram_header = {
            let mut cols = vec!["step".to_string()];
            for i in 1..=WINDOW {
                cols.push(format!("sigma{i}"));
            }
            cols.extend(["g12".to_string(), "g23".to_string(), "kstar".to_string()]);
            cols.join(",")
        };
        Ok(RunSink {
            cfg,
            dir,
            window: UpdateWindow::new(WINDOW),
            gram_csv: CsvAppender::open(&dir.gram_path(), &gram_header)?,
            metrics_csv: CsvAppender::open(&dir.metrics_path(), &MetricsCsv::header(n_tasks))?,
            disp: DisplacementTracker::new(&initial_model.flatten_attn()),
            dense_until: 0,
            direction_saves: BTreeSet::new(),
            crossed: vec![false; n_tasks],
            started: Instant::now(),
            last_logged: Instant::now(),
        })
    }

    /// Restore stream state when resuming: window entries from the resume
    /// checkpoint and displacement snapshots from their files.
    pub fn restore(&mut self, resume: &CheckpointData, start_step: usize) -> Result<()> {
        let mut i = 0;
        loop {
            let name = format!("window.delta{i}");
            match resume.section(&name) {
                Some(data) => {
                    let v = grokspectra::model::AttnVector {
                        layout: window_layout(self.cfg)?,
                        data: data.to_vec(),
                    };
                    // Window steps are not individually persisted; ages are
                    // what matter and order is preserved.
                    self.window.push(start_step.saturating_sub(WINDOW - 1 - i.min(WINDOW - 1)), &v);
                }
                None => break,
            }
            i += 1;
        }
        for step in self.dir.disp_snapshot_steps()? {
            if step > start_step {
                let _ = fs::remove_file(self.dir.disp_snapshot_path(step));
                continue;
            }
            let data = read_checkpoint_file(&self.dir.disp_snapshot_path(step))?;
            let snap = data
                .section("displacement")
                .context("displacement snapshot missing its section")?;
            self.disp.push_raw(step, snap.to_vec());
        }
        Ok(())
    }

    fn save_directions(&mut self, step: usize, model: &Model<f32>) -> Result<()> {
        if !self.window.is_full() {
            return Ok(());
        }
        let spec = gram_spectrum(&self.window)?;
        let rank = spec
            .eigenvalues
            .iter()
            .filter(|&&v| v > 1e-12 * spec.eigenvalues[0].max(f64::MIN_POSITIVE))
            .count();
        let n = self.cfg.n_directions.min(rank).max(spec.edge_k.min(rank));
        if n == 0 {
            return Ok(());
        }
        let dirs = edge_directions(&self.window, n)?;
        let mut sections: Vec<(String, Vec<f32>)> = Vec::new();
        for (j, d) in dirs.iter().enumerate() {
            sections.push((
                format!("edge_v{}@{step}", j + 1),
                d.iter().map(|&x| x as f32).collect(),
            ));
        }
        sections.push((
            format!("eigenvalues@{step}"),
            spec.eigenvalues.iter().map(|&x| x as f32).collect(),
        ));
        sections.push((format!("edge_kstar@{step}"), vec![spec.edge_k as f32]));
        let data = CheckpointData {
            d_model: model.cfg.d_model as u32,
            n_heads: model.cfg.n_heads as u32,
            d_ff: model.cfg.d_ff as u32,
            n_layers: model.cfg.n_layers as u32,
            vocab: model.cfg.vocab as u32,
            step: step as u32,
            task_count: model.n_tasks as u32,
            sections,
        };
        write_checkpoint_file(&self.dir.directions_path(step), &data)?;
        Ok(())
    }

    /// Flush stream outputs at the end of training.
    pub fn finalize(&mut self, final_step: usize, model: &Model<f32>, opt: &AdamState<f32>) -> Result<()> {
        self.save_directions(final_step, model)?;
        write_checkpoint_file(&self.dir.checkpoint_path(final_step), &model.to_checkpoint(final_step as u32))?;
        self.write_resume(final_step, model, opt)?;
        if self.disp.len() >= 2 {
            let mut text = String::from("step");
            for i in 1..=10 {
                text.push_str(&format!(",eig{i}"));
            }
            text.push('\n');
            for (step, eigs) in self.disp.eigen_series()? {
                text.push_str(&step.to_string());
                for i in 0..10 {
                    text.push_str(&format!(",{:.6e}", eigs.get(i).copied().unwrap_or(0.0)));
                }
                text.push('\n');
            }
            fs::write(self.dir.displacement_path(), text)?;
        }
        self.gram_csv.flush()?;
        self.metrics_csv.flush()?;
        Ok(())
    }

    fn write_resume(&self, step: usize, model: &Model<f32>, opt: &AdamState<f32>) -> Result<()> {
        let mut data = model.to_resume_checkpoint(step as u32, opt);
        for (i, entry) in self.window.iter().enumerate() {
            data.sections.push((format!("window.delta{i}"), entry.data.clone()));
        }
        write_checkpoint_file(&self.dir.resume_path(), &data)?;
        Ok(())
    }
}

fn window_layout(cfg: &RunConfig) -> Result<grokspectra::model::AttnLayout> {
    let mc = cfg.model_config().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(grokspectra::model::AttnLayout {
        n_layers: mc.n_layers,
        d_model: mc.d_model,
        n_heads: mc.n_heads,
    })
}

type SinkResult = std::result::Result<(), Box<dyn std::error::Error + Send + Sync>>;

impl<'a> TrainSink<f32> for RunSink<'a> {
    fn on_step(&mut self, ctx: StepCtx<'_, f32>) -> SinkResult {
        let step = ctx.step;
        self.window.push(step, ctx.delta_attn);

        if step % self.cfg.disp_every == 0 {
            self.disp.record(step, &ctx.model.flatten_attn());
            let snap = self.disp.snapshots().last().unwrap().clone();
            let data = CheckpointData {
                d_model: ctx.model.cfg.d_model as u32,
                n_heads: ctx.model.cfg.n_heads as u32,
                d_ff: ctx.model.cfg.d_ff as u32,
                n_layers: ctx.model.cfg.n_layers as u32,
                vocab: ctx.model.cfg.vocab as u32,
                step: step as u32,
                task_count: ctx.model.n_tasks as u32,
                sections: vec![("displacement".to_string(), snap)],
            };
            write_checkpoint_file(&self.dir.disp_snapshot_path(step), &data)?;
        }

        if self.window.is_full() && (step % self.cfg.gram_every == 0 || step <= self.dense_until) {
            let spec = gram_spectrum(&self.window)?;
            let mut cols = vec![step.to_string()];
            for v in &spec.eigenvalues {
                cols.push(format!("{v:.6e}"));
            }
            cols.push(format!("{:.6e}", spec.g12()));
            cols.push(format!("{:.6e}", spec.g23()));
            cols.push(spec.edge_k.to_string());
            self.gram_csv.append(&cols.join(","))?;
        }

        if self.direction_saves.remove(&step) {
            self.save_directions(step, ctx.model)?;
        }

        if step % self.cfg.checkpoint_every == 0 {
            write_checkpoint_file(
                &self.dir.checkpoint_path(step),
                &ctx.model.to_checkpoint(step as u32),
            )?;
            self.write_resume(step, ctx.model, ctx.opt)?;
        }
        Ok(())
    }

    fn on_eval(&mut self, ctx: EvalCtx<'_, f32>) -> SinkResult {
        let step = ctx.record.step;
        self.metrics_csv.append(&MetricsCsv::row(ctx.record))?;
        self.metrics_csv.flush()?;

        for (t, ev) in ctx.record.evals.iter().enumerate() {
            // Densify the Gram stream through the transition zone.
            if ev.test_acc > 0.5 && ev.test_acc <= 0.95 {
                self.dense_until = self.dense_until.max(step + 2 * self.cfg.eval_every);
            }
            let newly_crossed = matches!(ctx.crossings[t], Some(s) if s == step);
            if newly_crossed && !self.crossed[t] {
                self.dense_until = self.dense_until.max(step + DENSE_AFTER_CROSSING);
                for offset in [0usize, 500, 1000] {
                    if offset == 0 {
                        self.save_directions(step, ctx.model)?;
                        write_checkpoint_file(
                            &self.dir.checkpoint_path(step),
                            &ctx.model.to_checkpoint(step as u32),
                        )?;
                    } else {
                        self.direction_saves.insert(step + offset);
                    }
                }
            }
            // Re-arm after a dip so the next crossing also records state.
            self.crossed[t] = ctx.crossings[t].is_some();
        }

        if self.last_logged.elapsed().as_secs() >= 60 {
            self.last_logged = Instant::now();
            let accs: Vec<String> =
                ctx.record.evals.iter().map(|e| format!("{:.3}", e.test_acc)).collect();
            println!(
                "[{}] step {} test_acc [{}] ({:.0}s elapsed)",
                self.cfg.name,
                step,
                accs.join(" "),
                self.started.elapsed().as_secs_f64()
            );
        }
        Ok(())
    }
}

/// Train (or resume) a run into its directory. Returns the summary.
pub fn run_training(cfg: &RunConfig, dir: &RunDir) -> Result<RunSummary> {
    dir.create()?;
    let tasks: Vec<TaskSpec> = cfg.tasks()?;
    let datasets: Vec<Dataset> = tasks.iter().map(|t| make_dataset(t, cfg.seed)).collect();
    let model_cfg = cfg.model_config()?;

    if dir.config_path().exists() {
        let existing = RunConfig::parse(&fs::read_to_string(dir.config_path())?)?;
        if existing != *cfg {
            bail!(
                "run directory {} already holds a different config",
                dir.root.display()
            );
        }
    } else {
        fs::write(dir.config_path(), cfg.serialize())?;
    }

    // Resume if a resume checkpoint exists.
    let fresh: Model<f32> = Model::build(&model_cfg, tasks.len()).map_err(|e| anyhow::anyhow!(e))?;
    let mut sink = RunSink::new(cfg, dir, tasks.len(), &fresh)?;
    let resume = if dir.resume_path().exists() {
        let data = read_checkpoint_file(&dir.resume_path())?;
        let start_step = data.step as usize;
        let mut model = fresh;
        model.load_checkpoint(&data)?;
        let mut opt = AdamState::new(&model);
        model.load_resume_state(&data, &mut opt)?;
        truncate_csv_to_step(&dir.metrics_path(), start_step)?;
        truncate_csv_to_step(&dir.gram_path(), start_step)?;
        for s in dir.checkpoint_steps()? {
            if s > start_step {
                let _ = fs::remove_file(dir.checkpoint_path(s));
            }
        }
        for s in dir.direction_steps()? {
            if s > start_step {
                let _ = fs::remove_file(dir.directions_path(s));
            }
        }
        sink.restore(&data, start_step)?;
        let history = MetricsCsv::parse(&fs::read_to_string(dir.metrics_path())?)?;
        println!("[{}] resuming at step {start_step}", cfg.name);
        Some(ResumeState { model, opt, start_step, history })
    } else {
        None
    };

    let opts = TrainOptions {
        eval_every: cfg.eval_every,
        stop_margin: if cfg.stop_margin > 0 { Some(cfg.stop_margin) } else { None },
    };
    let (model, opt, outcome) =
        grokspectra::model::train_run(&model_cfg, &tasks, &datasets, resume, opts, &mut sink)
            .map_err(|e| anyhow::anyhow!("training failed: {e}"))?;

    sink.finalize(outcome.final_step, &model, &opt)?;
    let summary = RunSummary {
        final_step: outcome.final_step,
        grok_steps: outcome.grok_steps.iter().map(|g| g.unwrap_or(0)).collect(),
        grokked: outcome.grok_steps.iter().map(|g| g.is_some()).collect(),
    };
    write_summary(&dir.summary_path(), &summary)?;
    println!(
        "[{}] done at step {}: grok_steps {:?}",
        cfg.name, summary.final_step, summary.grok_steps
    );
    Ok(summary)
}

/// Gap series parsed back from gram.csv (step, g23).
pub fn load_gap_series(dir: &RunDir) -> Result<GapSeries> {
    let text = fs::read_to_string(dir.gram_path())?;
    let mut series = GapSeries::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        // step, sigma1..sigma20, g12, g23, kstar
        let step: usize = fields[0].parse()?;
        let g23: f64 = fields[WINDOW + 2].parse()?;
        series.push(step, g23);
    }
    Ok(series)
}
