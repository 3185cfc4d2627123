//! Experiment plans: a TOML list of runs plus an output root. The full paper
//! grid (6 ops x 2 weight decays x 3 seeds) is a built-in constructor.

use crate::config::RunConfig;
use anyhow::{bail, Result};
use grokspectra::groupmath::OpKind;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub out_root: String,
    /// Analysis passes to run after each training completes, at the post-grok
    /// (or final) step: any of "spectra", "fields", "probes", "sae", "cousage".
    #[serde(default)]
    pub analyses: Vec<String>,
    /// Offset past the grok step for the analysis checkpoint.
    #[serde(default = "default_analysis_offset")]
    pub analysis_offset: usize,
    pub runs: Vec<RunConfig>,
}

fn default_analysis_offset() -> usize {
    1000
}

impl ExperimentPlan {
    pub fn parse(text: &str) -> Result<ExperimentPlan> {
        let plan: ExperimentPlan = toml::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn serialize(&self) -> String {
        toml::to_string_pretty(self).expect("plan serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for run in &self.runs {
            if !names.insert(&run.name) {
                bail!("duplicate run name '{}'", run.name);
            }
            run.tasks()?;
            run.model_config()?;
        }
        for a in &self.analyses {
            if !["spectra", "fields", "probes", "sae", "cousage"].contains(&a.as_str()) {
                bail!("unknown analysis '{a}'");
            }
        }
        Ok(())
    }

    /// The 36-condition single-task grid: 6 ops x wd in {0, 1} x 3 seeds.
    pub fn full_grid(out_root: &str, max_steps: usize, stop_margin: usize) -> ExperimentPlan {
        let mut runs = Vec::new();
        for op in OpKind::ALL {
            for wd in [1.0, 0.0] {
                for seed in [42u64, 137, 2024] {
                    let mut cfg = RunConfig::single(op, wd, seed, max_steps);
                    cfg.eval_every = 25;
                    // Early stop only makes sense where grokking can happen.
                    if op.groks() && wd > 0.0 {
                        cfg.stop_margin = stop_margin;
                    }
                    runs.push(cfg);
                }
            }
        }
        ExperimentPlan {
            out_root: out_root.to_string(),
            analyses: vec!["spectra".into(), "fields".into()],
            analysis_offset: default_analysis_offset(),
            runs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_36_unique_runs() {
        let plan = ExperimentPlan::full_grid("runs", 20_000, 2500);
        assert_eq!(plan.runs.len(), 36);
        plan.validate().unwrap();
        let text = plan.serialize();
        let back = ExperimentPlan::parse(&text).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn rejects_duplicates_and_bad_analyses() {
        let mut plan = ExperimentPlan::full_grid("runs", 100, 0);
        plan.runs[1].name = plan.runs[0].name.clone();
        assert!(plan.validate().is_err());
        let mut plan = ExperimentPlan::full_grid("runs", 100, 0);
        plan.analyses.push("divination".into());
        assert!(plan.validate().is_err());
    }
}
