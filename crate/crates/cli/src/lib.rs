//! Experiment runner: training orchestration, run directories, offline
//! analyses, and report generation for the grokspectra toolkit.

pub mod analyze;
pub mod config;
pub mod plan;
pub mod report;
pub mod rundir;
pub mod trainer;

use anyhow::Result;
use rundir::RunDir;
use std::path::{Path, PathBuf};

/// Worker cap from the environment, defaulting to 1.
pub fn thread_cap() -> usize {
    std::env::var("GROKSPECTRA_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Execute a plan: train every run (resuming where possible), then run the
/// scheduled analyses at grok + offset (or the final step). Independent runs
/// execute concurrently up to the worker cap.
pub fn run_plan(plan: &plan::ExperimentPlan) -> Result<()> {
    plan.validate()?;
    let root = PathBuf::from(&plan.out_root);
    std::fs::create_dir_all(&root)?;
    let workers = thread_cap().min(plan.runs.len().max(1));
    let queue = std::sync::Mutex::new(plan.runs.iter().rev().collect::<Vec<_>>());
    let failures = std::sync::Mutex::new(Vec::<String>::new());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let cfg = match queue.lock().unwrap().pop() {
                    Some(c) => c,
                    None => break,
                };
                if let Err(e) = execute_run(cfg, plan, &root) {
                    failures.lock().unwrap().push(format!("{}: {e:#}", cfg.name));
                }
            });
        }
    });

    let failures = failures.into_inner().unwrap();
    if !failures.is_empty() {
        anyhow::bail!("{} run(s) failed:\n{}", failures.len(), failures.join("\n"));
    }
    Ok(())
}

fn execute_run(cfg: &config::RunConfig, plan: &plan::ExperimentPlan, root: &Path) -> Result<()> {
    let dir = RunDir::new(root.join(&cfg.name));
    let summary = trainer::run_training(cfg, &dir)?;
    if plan.analyses.is_empty() {
        return Ok(());
    }
    let step = analysis_step(&summary, plan.analysis_offset);
    let opts = analyze::AnalyzeOpts {
        spectra: plan.analyses.iter().any(|a| a == "spectra"),
        fields: plan.analyses.iter().any(|a| a == "fields"),
        probes: plan.analyses.iter().any(|a| a == "probes"),
        sae: plan.analyses.iter().any(|a| a == "sae"),
        cousage: plan.analyses.iter().any(|a| a == "cousage"),
    };
    analyze::run_analyze(&dir, step, opts)
}

/// Post-grok analysis step: the last task's grok step plus the offset,
/// clamped to the run's end; the final step when the run never grokked.
pub fn analysis_step(summary: &rundir::RunSummary, offset: usize) -> usize {
    let last_grok = summary
        .grok_steps
        .iter()
        .zip(&summary.grokked)
        .filter(|&(_, &g)| g)
        .map(|(&s, _)| s)
        .max();
    match last_grok {
        Some(s) if summary.grokked.iter().all(|&g| g) => (s + offset).min(summary.final_step),
        _ => summary.final_step,
    }
}
