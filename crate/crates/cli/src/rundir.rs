//! Run-directory layout and the small CSV/TOML readers and writers the
//! runner and analyses share.
//!
//! ```text
//! <run>/
//!   config.toml
//!   metrics.csv               step, per-task train/test acc and loss
//!   summary.toml              grok steps, final step
//!   checkpoints/step_{N}.bin  model parameters
//!   checkpoints/resume.bin    parameters + Adam moments + update window
//!   spectra/gram.csv          step, sigma1..sigma20, g12, g23, kstar
//!   spectra/wsvd.csv          step, layer, matrix, s1..s8
//!   spectra/displacement.csv  step, leading eigenvalues
//!   spectra/directions_step{N}.bin
//!   spectra/disp/step_{N}.bin displacement snapshots
//!   funcmode/ probes/ sae/ cousage/   analysis outputs
//! ```

use anyhow::{bail, Context, Result};
use grokspectra::model::{
    read_checkpoint, write_checkpoint, CheckpointData, TaskEval, TrainRecord,
};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> RunDir {
        RunDir { root: root.into() }
    }

    pub fn create(&self) -> Result<()> {
        for sub in ["checkpoints", "spectra", "spectra/disp", "funcmode", "funcmode/fields", "probes", "sae", "cousage"] {
            fs::create_dir_all(self.root.join(sub))?;
        }
        Ok(())
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.toml")
    }

    pub fn checkpoint_path(&self, step: usize) -> PathBuf {
        self.root.join(format!("checkpoints/step_{step}.bin"))
    }

    pub fn resume_path(&self) -> PathBuf {
        self.root.join("checkpoints/resume.bin")
    }

    pub fn gram_path(&self) -> PathBuf {
        self.root.join("spectra/gram.csv")
    }

    pub fn wsvd_path(&self) -> PathBuf {
        self.root.join("spectra/wsvd.csv")
    }

    pub fn displacement_path(&self) -> PathBuf {
        self.root.join("spectra/displacement.csv")
    }

    pub fn directions_path(&self, step: usize) -> PathBuf {
        self.root.join(format!("spectra/directions_step{step}.bin"))
    }

    pub fn disp_snapshot_path(&self, step: usize) -> PathBuf {
        self.root.join(format!("spectra/disp/step_{step}.bin"))
    }

    pub fn field_path(&self, step: usize, k: usize) -> PathBuf {
        self.root.join(format!("funcmode/fields/step{step}_v{k}.bin"))
    }

    pub fn profiles_path(&self) -> PathBuf {
        self.root.join("funcmode/profiles.csv")
    }

    pub fn fourier2d_path(&self) -> PathBuf {
        self.root.join("funcmode/fourier2d.csv")
    }

    pub fn probes_path(&self) -> PathBuf {
        self.root.join("probes/report.csv")
    }

    pub fn sae_model_path(&self) -> PathBuf {
        self.root.join("sae/model.bin")
    }

    pub fn sae_nulls_path(&self) -> PathBuf {
        self.root.join("sae/nulls.csv")
    }

    pub fn cousage_path(&self) -> PathBuf {
        self.root.join("cousage/report.csv")
    }

    /// Steps with a saved model checkpoint, ascending.
    pub fn checkpoint_steps(&self) -> Result<Vec<usize>> {
        let mut steps = Vec::new();
        for entry in fs::read_dir(self.root.join("checkpoints"))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(num) = name.strip_prefix("step_").and_then(|s| s.strip_suffix(".bin")) {
                if let Ok(step) = num.parse() {
                    steps.push(step);
                }
            }
        }
        steps.sort_unstable();
        Ok(steps)
    }

    /// Steps with saved edge directions, ascending.
    pub fn direction_steps(&self) -> Result<Vec<usize>> {
        let mut steps = Vec::new();
        for entry in fs::read_dir(self.root.join("spectra"))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(num) =
                name.strip_prefix("directions_step").and_then(|s| s.strip_suffix(".bin"))
            {
                if let Ok(step) = num.parse() {
                    steps.push(step);
                }
            }
        }
        steps.sort_unstable();
        Ok(steps)
    }

    pub fn disp_snapshot_steps(&self) -> Result<Vec<usize>> {
        let dir = self.root.join("spectra/disp");
        let mut steps = Vec::new();
        if dir.exists() {
            for entry in fs::read_dir(dir)? {
                let name = entry?.file_name().to_string_lossy().into_owned();
                if let Some(num) = name.strip_prefix("step_").and_then(|s| s.strip_suffix(".bin")) {
                    if let Ok(step) = num.parse() {
                        steps.push(step);
                    }
                }
            }
        }
        steps.sort_unstable();
        Ok(steps)
    }
}

/// Final run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_step: usize,
    /// Definitive grok step per task; 0 encodes "did not grok".
    pub grok_steps: Vec<usize>,
    pub grokked: Vec<bool>,
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    fs::write(path, toml::to_string_pretty(summary)?)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    Ok(toml::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_checkpoint_file(path: &Path, data: &CheckpointData) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write_checkpoint(&mut w, data)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint_file(path: &Path) -> Result<CheckpointData> {
    let r = BufReader::new(
        fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
    );
    Ok(read_checkpoint(r)?)
}

/// metrics.csv codec: one row per evaluation step with per-task columns.
pub struct MetricsCsv;

impl MetricsCsv {
    pub fn header(n_tasks: usize) -> String {
        let mut cols = vec!["step".to_string()];
        for t in 0..n_tasks {
            cols.push(format!("task{t}_train_acc"));
            cols.push(format!("task{t}_test_acc"));
            cols.push(format!("task{t}_train_loss"));
            cols.push(format!("task{t}_test_loss"));
        }
        cols.join(",")
    }

    pub fn row(rec: &TrainRecord) -> String {
        let mut cols = vec![rec.step.to_string()];
        for e in &rec.evals {
            cols.push(format!("{:.6}", e.train_acc));
            cols.push(format!("{:.6}", e.test_acc));
            cols.push(format!("{:.6e}", e.train_loss));
            cols.push(format!("{:.6e}", e.test_loss));
        }
        cols.join(",")
    }

    pub fn parse(text: &str) -> Result<Vec<TrainRecord>> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if (fields.len() - 1) % 4 != 0 {
                bail!("bad metrics row: {line}");
            }
            let step: usize = fields[0].parse()?;
            let evals = fields[1..]
                .chunks(4)
                .map(|c| -> Result<TaskEval> {
                    Ok(TaskEval {
                        train_acc: c[0].parse()?,
                        test_acc: c[1].parse()?,
                        train_loss: c[2].parse()?,
                        test_loss: c[3].parse()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(TrainRecord { step, evals });
        }
        Ok(out)
    }
}

/// Rewrite a CSV keeping the header and only rows with step <= `max_step`.
/// Used when resuming: rows past the resume point are replayed.
pub fn truncate_csv_to_step(path: &Path, max_step: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let mut kept = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            kept.push(line.to_string());
            continue;
        }
        if let Some(first) = line.split(',').next() {
            if let Ok(step) = first.parse::<usize>() {
                if step <= max_step {
                    kept.push(line.to_string());
                }
            }
        }
    }
    fs::write(path, kept.join("\n") + "\n")?;
    Ok(())
}

/// Append-only CSV writer that creates the header on first use.
pub struct CsvAppender {
    file: fs::File,
}

impl CsvAppender {
    pub fn open(path: &Path, header: &str) -> Result<CsvAppender> {
        let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
        let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "{header}")?;
        }
        Ok(CsvAppender { file })
    }

    pub fn append(&mut self, row: &str) -> Result<()> {
        writeln!(self.file, "{row}")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip() {
        let rec = TrainRecord {
            step: 120,
            evals: vec![
                TaskEval { train_acc: 1.0, test_acc: 0.5, train_loss: 1e-3, test_loss: 2.5 },
                TaskEval { train_acc: 0.25, test_acc: 0.125, train_loss: 3.0, test_loss: 3.5 },
            ],
        };
        let text = format!("{}\n{}\n", MetricsCsv::header(2), MetricsCsv::row(&rec));
        let parsed = MetricsCsv::parse(&text).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].step, 120);
        assert_eq!(parsed[0].evals.len(), 2);
        assert!((parsed[0].evals[1].test_loss - 3.5).abs() < 1e-12);
    }

    #[test]
    fn truncation_keeps_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "step,x\n100,1\n200,2\n300,3\n").unwrap();
        truncate_csv_to_step(&path, 200).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "step,x\n100,1\n200,2\n");
    }

    #[test]
    fn summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.toml");
        let s = RunSummary { final_step: 4210, grok_steps: vec![1520, 0], grokked: vec![true, false] };
        write_summary(&path, &s).unwrap();
        assert_eq!(read_summary(&path).unwrap(), s);
    }
}
