use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use grokspectra_cli::analyze::{run_analyze, AnalyzeOpts};
use grokspectra_cli::config::RunConfig;
use grokspectra_cli::plan::ExperimentPlan;
use grokspectra_cli::report::make_report;
use grokspectra_cli::rundir::RunDir;
use grokspectra_cli::trainer::run_training;
use std::fs;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "grokspectra", about = "Grokking trainer and spectral-edge analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run from a config file into an output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run analyses against a training run directory.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        /// Target step (resolved to the nearest saved directions/checkpoint).
        #[arg(long)]
        step: usize,
        #[arg(long)]
        spectra: bool,
        #[arg(long)]
        fields: bool,
        #[arg(long)]
        probes: bool,
        #[arg(long)]
        sae: bool,
        #[arg(long)]
        cousage: bool,
        /// Run every analysis.
        #[arg(long)]
        all: bool,
    },
    /// Aggregate run directories into tables T1-T4 and a JSON summary.
    Report {
        /// Glob over run directories, e.g. "runs/*".
        #[arg(long)]
        runs: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute an experiment plan (training plus scheduled analyses).
    Grid {
        #[arg(long)]
        plan: PathBuf,
        /// Write the built-in 36-condition grid plan to this path and exit.
        #[arg(long)]
        emit_full_grid: bool,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, out } => {
            let cfg = RunConfig::parse(
                &fs::read_to_string(&config)
                    .with_context(|| format!("reading {}", config.display()))?,
            )?;
            run_training(&cfg, &RunDir::new(out))?;
        }
        Command::Analyze { run, step, spectra, fields, probes, sae, cousage, all } => {
            let opts = if all {
                AnalyzeOpts::all()
            } else {
                AnalyzeOpts { spectra, fields, probes, sae, cousage }
            };
            if !opts.any() {
                anyhow::bail!(
                    "select at least one of --spectra --fields --probes --sae --cousage (or --all)"
                );
            }
            run_analyze(&RunDir::new(run), step, opts)?;
        }
        Command::Report { runs, out } => {
            let mut roots: Vec<PathBuf> = glob::glob(&runs)?
                .filter_map(|p| p.ok())
                .filter(|p| p.is_dir())
                .collect();
            roots.sort();
            let summary = make_report(&roots, &out)?;
            println!(
                "report over {} run(s) written to {}",
                summary.runs.len(),
                out.display()
            );
            for miss in &summary.missing {
                println!("  incomplete: {miss}");
            }
        }
        Command::Grid { plan, emit_full_grid } => {
            if emit_full_grid {
                let built = ExperimentPlan::full_grid("runs", 20_000, 2500);
                fs::write(&plan, built.serialize())?;
                println!("wrote full 36-condition grid plan to {}", plan.display());
                return Ok(());
            }
            let parsed = ExperimentPlan::parse(
                &fs::read_to_string(&plan)
                    .with_context(|| format!("reading {}", plan.display()))?,
            )?;
            grokspectra_cli::run_plan(&parsed)?;
        }
    }
    Ok(())
}
