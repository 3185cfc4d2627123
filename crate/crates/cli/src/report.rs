//! Aggregate a set of run directories into the four result tables plus a
//! JSON summary. Reports are a pure function of the run-directory contents.

use crate::analyze::primary_basis_label;
use crate::config::RunConfig;
use crate::rundir::{read_summary, RunDir};
use crate::trainer::load_gap_series;
use anyhow::{bail, Context, Result};
use grokspectra::groupmath::OpKind;
use grokspectra::spectral::decline_magnitude;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Decline-detection threshold on the g23 early/late ratio.
pub const DECLINE_DETECTED: f64 = 5.0;

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub path: PathBuf,
    pub ops: Vec<String>,
    pub wd: f64,
    pub seed: u64,
    pub grokked: Vec<bool>,
    pub grok_steps: Vec<usize>,
    pub final_step: usize,
    pub decline_ratio: Option<f64>,
    /// Per direction k: (basis -> (peak, F, top3, flat)).
    #[serde(skip)]
    pub profiles: BTreeMap<(usize, String), ProfileRow>,
    /// (k, kind) -> r2; synergy under kind = "synergy".
    pub probe_r2: BTreeMap<String, f64>,
    /// (k, basis) -> retained power spectrum (omega = index + 1).
    #[serde(skip)]
    pub power: BTreeMap<(usize, String), Vec<f64>>,
    pub sae: Option<SaeRow>,
    pub purity: BTreeMap<usize, f64>,
    pub eff_rank: BTreeMap<usize, f64>,
    pub sharedness: BTreeMap<usize, f64>,
    pub above_edge: BTreeMap<usize, bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileRow {
    pub peak_omega: usize,
    pub concentration: f64,
    pub top3: Vec<usize>,
    pub flat: bool,
    pub baseline: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SaeRow {
    pub observed_mean: f64,
    pub combinatorial: f64,
    pub random_mean: f64,
    pub random_std: f64,
    pub p_value: f64,
}

/// Parse everything a report needs out of one run directory.
pub fn load_run(root: &Path) -> Result<RunReport> {
    let dir = RunDir::new(root);
    let cfg = RunConfig::parse(&fs::read_to_string(dir.config_path())?)
        .with_context(|| format!("config in {}", root.display()))?;
    let summary = read_summary(&dir.summary_path())
        .with_context(|| format!("summary in {} (training incomplete?)", root.display()))?;

    let decline_ratio = load_gap_series(&dir)
        .ok()
        .and_then(|s| decline_magnitude(&s).ok());

    let mut profiles = BTreeMap::new();
    let mut purity = BTreeMap::new();
    let mut eff_rank = BTreeMap::new();
    let mut above_edge = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(dir.profiles_path()) {
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 15 || !f[14].is_empty() {
                continue; // per-PC rows carry an extra tag
            }
            let k: usize = f[2].parse()?;
            let basis = f[4].to_string();
            profiles.insert(
                (k, basis),
                ProfileRow {
                    peak_omega: f[5].parse()?,
                    concentration: f[6].parse()?,
                    top3: f[8]
                        .split(';')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse())
                        .collect::<std::result::Result<_, _>>()?,
                    flat: f[7] == "true",
                    baseline: f[9].parse()?,
                },
            );
            above_edge.insert(k, f[3] == "true");
            eff_rank.insert(k, f[11].parse()?);
            purity.insert(k, f[12].parse()?);
        }
    }

    let mut power: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(root.join("funcmode/power.csv")) {
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 6 {
                continue;
            }
            let k: usize = f[2].parse()?;
            let omega: usize = f[4].parse()?;
            let pw: f64 = f[5].parse()?;
            let entry = power.entry((k, f[3].to_string())).or_default();
            if entry.len() < omega {
                entry.resize(omega, 0.0);
            }
            entry[omega - 1] = pw;
        }
    }

    let mut probe_r2 = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(dir.probes_path()) {
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 7 {
                continue;
            }
            let key = format!("v{}_{}", f[2], f[3]);
            let value = if f[3] == "synergy" { f[6] } else { f[4] };
            if let Ok(v) = value.parse() {
                probe_r2.insert(key, v);
            }
        }
    }

    let mut sae = None;
    if let Ok(text) = fs::read_to_string(dir.sae_nulls_path()) {
        if let Some(line) = text.lines().nth(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() >= 9 {
                sae = Some(SaeRow {
                    observed_mean: f[4].parse()?,
                    combinatorial: f[5].parse()?,
                    random_mean: f[6].parse()?,
                    random_std: f[7].parse()?,
                    p_value: f[8].parse()?,
                });
            }
        }
    }

    let mut sharedness = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(dir.cousage_path()) {
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() >= 10 {
                if let (Ok(k), Ok(s)) = (f[2].parse::<usize>(), f[9].parse::<f64>()) {
                    sharedness.insert(k, s);
                }
            }
        }
    }

    Ok(RunReport {
        name: cfg.name.clone(),
        path: root.to_path_buf(),
        ops: cfg.ops.clone(),
        wd: cfg.wd,
        seed: cfg.seed,
        grokked: summary.grokked,
        grok_steps: summary.grok_steps,
        final_step: summary.final_step,
        decline_ratio,
        profiles,
        probe_r2,
        power,
        sae,
        purity,
        eff_rank,
        sharedness,
        above_edge,
    })
}

#[derive(Debug, Serialize)]
pub struct ReportSummary {
    pub runs: Vec<RunReport>,
    pub t1_decline: Vec<T1Row>,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct T1Row {
    pub condition: String,
    pub runs: usize,
    pub detected: usize,
    pub mean_magnitude: f64,
}

/// Emit tables T1-T4 as CSV plus a JSON summary into `out`.
pub fn make_report(run_roots: &[PathBuf], out: &Path) -> Result<ReportSummary> {
    if run_roots.is_empty() {
        bail!("no run directories matched");
    }
    fs::create_dir_all(out)?;
    let mut runs = Vec::new();
    let mut missing = Vec::new();
    for root in run_roots {
        match load_run(root) {
            Ok(r) => runs.push(r),
            Err(e) => missing.push(format!("{}: {e}", root.display())),
        }
    }
    if runs.is_empty() {
        bail!("no run directory could be loaded: {missing:?}");
    }

    // T1: decline detection by condition group.
    let mut groups: BTreeMap<String, Vec<&RunReport>> = BTreeMap::new();
    for r in &runs {
        if r.ops.len() != 1 {
            continue;
        }
        let op = OpKind::parse(&r.ops[0]).context("op")?;
        let condition = format!(
            "{}_wd{}",
            if op.groks() { "grokking_ops" } else { "non_grokking_ops" },
            r.wd
        );
        groups.entry(condition).or_default().push(r);
    }
    let mut t1 = String::from("condition,runs,decline_detected,mean_magnitude\n");
    let mut t1_rows = Vec::new();
    for (condition, members) in &groups {
        let ratios: Vec<f64> = members.iter().filter_map(|r| r.decline_ratio).collect();
        let detected = ratios.iter().filter(|&&r| r >= DECLINE_DETECTED).count();
        let mean = if ratios.is_empty() {
            0.0
        } else {
            ratios.iter().sum::<f64>() / ratios.len() as f64
        };
        t1.push_str(&format!("{condition},{},{detected},{mean:.2}\n", members.len()));
        t1_rows.push(T1Row {
            condition: condition.clone(),
            runs: members.len(),
            detected,
            mean_magnitude: mean,
        });
    }
    fs::write(out.join("t1_decline.csv"), t1)?;

    // T2: Fourier profiles of the edge directions in each op's primary basis.
    let mut t2 = String::from("run,op,k,above_edge,basis,peak_omega,concentration,top3,baseline\n");
    for r in &runs {
        if r.ops.len() != 1 {
            continue;
        }
        let op = OpKind::parse(&r.ops[0]).context("op")?;
        let basis = primary_basis_label(op);
        for k in 1..=5 {
            if let Some(p) = r.profiles.get(&(k, basis.to_string())) {
                t2.push_str(&format!(
                    "{},{},{k},{},{basis},{},{:.4},{},{:.4}\n",
                    r.name,
                    r.ops[0],
                    r.above_edge.get(&k).copied().unwrap_or(false),
                    p.peak_omega,
                    p.concentration,
                    p.top3.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(";"),
                    p.baseline
                ));
            }
        }
    }
    t2.push_str("uniform_baseline,,,,,,0.0206,,0.0206\n");
    fs::write(out.join("t2_fourier.csv"), t2)?;

    // T3: probe R2 by feature kind.
    let mut t3 = String::from("run,op,k,additive,multiplicative,combined,cross,synergy\n");
    for r in &runs {
        for k in 1..=3usize {
            let get = |kind: &str| {
                r.probe_r2
                    .get(&format!("v{k}_{kind}"))
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_default()
            };
            if !r.probe_r2.is_empty() {
                t3.push_str(&format!(
                    "{},{},{k},{},{},{},{},{}\n",
                    r.name,
                    r.ops.join("+"),
                    get("additive"),
                    get("multiplicative"),
                    get("combined"),
                    get("cross"),
                    get("synergy")
                ));
            }
        }
    }
    fs::write(out.join("t3_probes.csv"), t3)?;

    // T4: single-task vs tritask comparison for x2y2.
    let mut t4 = String::from("metric,single_task,tritask,ratio\n");
    let single = runs.iter().find(|r| r.ops == ["x2y2"]);
    let tri = runs.iter().find(|r| r.ops.len() == 3 && r.ops.contains(&"x2y2".to_string()));
    let add_run = runs.iter().find(|r| r.ops == ["add"] && r.grokked.iter().all(|&g| g));
    if let (Some(single), Some(tri)) = (single, tri) {
        // Concentration at the addition run's own peak frequency, in the
        // additive basis, for v1.
        if let Some(add_peak) = add_run
            .and_then(|a| a.profiles.get(&(1, "additive_sum".into())))
            .map(|p| p.peak_omega)
        {
            let f_at = |r: &RunReport| -> Option<f64> {
                let spectrum = r.power.get(&(1, "additive_sum".to_string()))?;
                let total: f64 = spectrum.iter().sum();
                let pw = *spectrum.get(add_peak - 1)?;
                (total > 0.0).then(|| pw / total)
            };
            let sv = f_at(single);
            let tv = f_at(tri);
            t4.push_str(&format!(
                "additive_F_at_w{add_peak},{},{},{}\n",
                sv.map(|v| format!("{v:.4}")).unwrap_or_else(|| "peak_mismatch".into()),
                tv.map(|v| format!("{v:.4}")).unwrap_or_else(|| "peak_mismatch".into()),
                match (sv, tv) {
                    (Some(a), Some(b)) if a > 0.0 => format!("{:.2}", b / a),
                    _ => String::new(),
                }
            ));
        }
        let syn = |r: &RunReport| r.probe_r2.get("v1_synergy").copied();
        if let (Some(a), Some(b)) = (syn(single), syn(tri)) {
            t4.push_str(&format!(
                "composition_synergy_v1,{a:.4},{b:.4},{}\n",
                if a.abs() > 1e-12 { format!("{:.2}", b / a) } else { String::new() }
            ));
        }
    }
    fs::write(out.join("t4_multitask.csv"), t4)?;

    let summary = ReportSummary { runs, t1_decline: t1_rows, missing };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
