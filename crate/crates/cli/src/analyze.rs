//! Offline analyses over a completed (or checkpointed) run directory:
//! weight-matrix SVD tracks, perturbation fields and Fourier profiles, ridge
//! probes, the SAE null suite, and co-usage statistics.

use crate::config::RunConfig;
use crate::rundir::{read_checkpoint_file, write_checkpoint_file, CsvAppender, RunDir};
use anyhow::{bail, Context, Result};
use grokspectra::cousage::{
    cousage_matrix, per_example_activation, sample_inputs, sharedness, task_usage,
    DOMINANCE_HALF_WIDTH,
};
use grokspectra::funcmode::{
    field_effective_rank, fourier2d, fourier2d_gaussian, fourier_profile, head_purity,
    per_pc_profile, perturb_response, residual_grid, FourierProfile, PerturbationField,
    ResidualGrid, PERTURB_SCALE,
};
use grokspectra::groupmath::{
    make_dataset, sqrt_minus_one, DlogTable, GroupingBasis, OpKind, TaskSpec,
};
use grokspectra::model::{AttnVector, CheckpointData, Model, Workspace};
use grokspectra::probes::{build_features, probe_r2, synergy, FeatureKind, FeatureSet};
use grokspectra::sae::{
    angle_matched_triple, combinatorial_expected_jaccard, feature_impact, jaccard, train_sae,
    NullReport, SaeConfig, SaeModel,
};
use grokspectra::spectral::weight_svd_track;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;

/// Ridge penalty for all probes (standardized features).
pub const PROBE_LAMBDA: f64 = 1.0;
/// Split seed for probe train/test partitions.
pub const PROBE_SPLIT_SEED: u64 = 17;
/// Directions analyzed per run: top-3 edge plus two bulk.
pub const N_ANALYZED: usize = 5;
/// Inputs sampled for per-example co-usage gradients.
pub const COUSAGE_SAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyzeOpts {
    pub spectra: bool,
    pub fields: bool,
    pub probes: bool,
    pub sae: bool,
    pub cousage: bool,
}

impl AnalyzeOpts {
    pub fn all() -> Self {
        AnalyzeOpts { spectra: true, fields: true, probes: true, sae: true, cousage: true }
    }
    pub fn any(&self) -> bool {
        self.spectra || self.fields || self.probes || self.sae || self.cousage
    }
}

/// Saved edge directions at one step.
pub struct SavedDirections {
    pub step: usize,
    pub directions: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub edge_k: usize,
}

pub fn load_directions(dir: &RunDir, step: usize) -> Result<SavedDirections> {
    let data = read_checkpoint_file(&dir.directions_path(step))?;
    let mut directions = Vec::new();
    let mut k = 1;
    while let Some(section) = data.section(&format!("edge_v{k}@{step}")) {
        directions.push(section.iter().map(|&v| v as f64).collect());
        k += 1;
    }
    let eigenvalues: Vec<f64> = data
        .section(&format!("eigenvalues@{step}"))
        .context("directions file missing eigenvalues")?
        .iter()
        .map(|&v| v as f64)
        .collect();
    let edge_k = data
        .section(&format!("edge_kstar@{step}"))
        .context("directions file missing edge position")?[0] as usize;
    if directions.is_empty() {
        bail!("directions file at step {step} holds no directions");
    }
    Ok(SavedDirections { step, directions, eigenvalues, edge_k })
}

/// Choose the saved-directions step closest to the requested one (within
/// 500 steps).
pub fn resolve_directions_step(dir: &RunDir, requested: usize) -> Result<usize> {
    let steps = dir.direction_steps()?;
    if steps.is_empty() {
        bail!("run has no saved edge directions");
    }
    let best = steps
        .iter()
        .copied()
        .min_by_key(|s| (s.abs_diff(requested), *s))
        .unwrap();
    if best.abs_diff(requested) > 500 {
        bail!(
            "no directions within 500 steps of {requested}; available: {:?}",
            steps
        );
    }
    Ok(best)
}

fn load_model(dir: &RunDir, cfg: &RunConfig, step: usize) -> Result<(Model<f32>, usize)> {
    let steps = dir.checkpoint_steps()?;
    let best = steps
        .iter()
        .copied()
        .min_by_key(|s| (s.abs_diff(step), *s))
        .context("run has no checkpoints")?;
    if best.abs_diff(step) > 500 {
        bail!("no checkpoint within 500 steps of {step}");
    }
    let data = read_checkpoint_file(&dir.checkpoint_path(best))?;
    let tasks = cfg.tasks()?;
    let mut model: Model<f32> =
        Model::build(&cfg.model_config()?, tasks.len()).map_err(|e| anyhow::anyhow!(e))?;
    model.load_checkpoint(&data)?;
    Ok((model, best))
}

/// Grouping bases to profile for a set of ops (union over tasks).
fn bases_for(ops: &[OpKind], p: u32) -> Result<Vec<GroupingBasis>> {
    let mut out: Vec<GroupingBasis> = vec![GroupingBasis::additive_sum(p)];
    let mut push = |b: GroupingBasis, out: &mut Vec<GroupingBasis>| {
        if !out.iter().any(|x| x.label() == b.label()) {
            out.push(b);
        }
    };
    for &op in ops {
        match op {
            OpKind::Add => push(GroupingBasis::dlog_sum_inputs(p), &mut out),
            OpKind::Sub => push(GroupingBasis::additive_diff(p), &mut out),
            OpKind::Mul => {
                push(GroupingBasis::dlog_sum_inputs(p), &mut out);
                push(GroupingBasis::output_additive(TaskSpec::new(op, p)?), &mut out);
            }
            OpKind::X2y2 => {
                push(GroupingBasis::output_additive(TaskSpec::new(op, p)?), &mut out);
                push(GroupingBasis::dlog_sum_gaussian(p)?, &mut out);
                push(GroupingBasis::dlog_diff_gaussian(p)?, &mut out);
            }
            OpKind::X2xyY2 | OpKind::X3xy => {
                push(GroupingBasis::output_additive(TaskSpec::new(op, p)?), &mut out);
            }
        }
    }
    Ok(out)
}

/// The basis whose profile is this op's headline number.
pub fn primary_basis_label(op: OpKind) -> &'static str {
    match op {
        OpKind::Add => "additive_sum",
        OpKind::Sub => "additive_diff",
        OpKind::Mul => "dlog_sum",
        OpKind::X2y2 | OpKind::X2xyY2 | OpKind::X3xy => "output_additive",
    }
}

pub fn run_analyze(dir: &RunDir, requested_step: usize, opts: AnalyzeOpts) -> Result<()> {
    let cfg = RunConfig::parse(&fs::read_to_string(dir.config_path())?)?;
    let p = cfg.p;
    let ops: Vec<OpKind> =
        cfg.ops.iter().map(|o| OpKind::parse(o).context("bad op in config")).collect::<Result<_>>()?;

    if opts.spectra {
        analyze_spectra(dir, &cfg)?;
    }
    if !(opts.fields || opts.probes || opts.sae || opts.cousage) {
        return Ok(());
    }

    let dstep = resolve_directions_step(dir, requested_step)?;
    let saved = load_directions(dir, dstep)?;
    let (model, model_step) = load_model(dir, &cfg, dstep)?;
    println!(
        "[analyze] run {} step {} (directions @{}, checkpoint @{})",
        cfg.name, requested_step, dstep, model_step
    );
    let dlog = DlogTable::new(p).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut ws = Workspace::new(&model, 4096.min((p * p) as usize));
    let base = residual_grid(&model, &mut ws);

    let n_dirs = saved.directions.len().min(N_ANALYZED);
    let fields: Vec<PerturbationField> = (0..n_dirs)
        .map(|i| {
            let v = AttnVector {
                layout: model.layout(),
                data: saved.directions[i].iter().map(|&x| x as f32).collect(),
            };
            perturb_response(&model, &mut ws, &base, &v, i + 1, PERTURB_SCALE)
                .map_err(|e| anyhow::anyhow!("{e}"))
        })
        .collect::<Result<Vec<_>>>()?;

    if opts.fields {
        analyze_fields(dir, &cfg, &ops, &saved, &model, &fields, &dlog, dstep)?;
    }
    if opts.probes {
        analyze_probes(dir, &cfg, &fields, &dlog, dstep)?;
    }
    if opts.sae {
        analyze_sae(dir, &cfg, &model, &mut ws, &base, &saved, &fields, dstep)?;
    }
    if opts.cousage {
        analyze_cousage(dir, &cfg, &model, &saved, dstep)?;
    }
    Ok(())
}

fn analyze_spectra(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let mut text = String::from("step,layer,matrix,ratio,capped");
    for i in 1..=8 {
        text.push_str(&format!(",s{i}"));
    }
    text.push('\n');
    for step in dir.checkpoint_steps()? {
        let data = read_checkpoint_file(&dir.checkpoint_path(step))?;
        for entry in weight_svd_track(&data).map_err(|e| anyhow::anyhow!("{e}"))? {
            text.push_str(&format!(
                "{step},{},{},{:.6e},{}",
                entry.layer,
                entry.mat.name(),
                entry.ratio,
                entry.capped
            ));
            for i in 0..8 {
                text.push_str(&format!(",{:.6e}", entry.top.get(i).copied().unwrap_or(0.0)));
            }
            text.push('\n');
        }
    }
    fs::write(dir.wsvd_path(), text)?;
    println!("[analyze] wrote {}", dir.wsvd_path().display());
    let _ = cfg;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn analyze_fields(
    dir: &RunDir,
    cfg: &RunConfig,
    ops: &[OpKind],
    saved: &SavedDirections,
    model: &Model<f32>,
    fields: &[PerturbationField],
    dlog: &DlogTable,
    step: usize,
) -> Result<()> {
    let p = cfg.p;
    let bases = bases_for(ops, p)?;
    let header = "run,step,k,above_edge,basis,peak_omega,concentration,flat,top3,baseline,\
                  interpolated_classes,eff_rank,head_purity,head_purity32,extra";
    let mut profiles = CsvAppender::open(&dir.profiles_path(), header)?;
    let mut f2d = CsvAppender::open(
        &dir.fourier2d_path(),
        "run,step,k,variant,diagonal_fraction,total_power",
    )?;
    let mut power_csv =
        CsvAppender::open(&dir.root.join("funcmode/power.csv"), "run,step,k,basis,omega,power")?;

    for (i, field) in fields.iter().enumerate() {
        let k = i + 1;
        // Persist the field grid in checkpoint format.
        let data = CheckpointData {
            d_model: field.d_model as u32,
            n_heads: model.cfg.n_heads as u32,
            d_ff: model.cfg.d_ff as u32,
            n_layers: model.cfg.n_layers as u32,
            vocab: p,
            step: step as u32,
            task_count: model.n_tasks as u32,
            sections: vec![
                (format!("delta_h@v{k}"), field.delta_h.clone()),
                (format!("epsilon@v{k}"), vec![field.epsilon as f32]),
            ],
        };
        write_checkpoint_file(&dir.field_path(step, k), &data)?;

        let v = AttnVector {
            layout: model.layout(),
            data: saved.directions[i].iter().map(|&x| x as f32).collect(),
        };
        let hp = head_purity(&v).map_err(|e| anyhow::anyhow!("{e}"))?;
        let eff = field_effective_rank(field).map_err(|e| anyhow::anyhow!("{e}"))?;
        let above = k <= saved.edge_k;

        for basis in &bases {
            let prof = fourier_profile(field, basis, dlog).map_err(|e| anyhow::anyhow!("{e}"))?;
            for (wi, &pw) in prof.spectrum.power.iter().enumerate() {
                power_csv.append(&format!(
                    "{},{step},{k},{},{},{pw:.6e}",
                    cfg.name,
                    prof.basis_label,
                    wi + 1
                ))?;
            }
            profiles.append(&profile_row(&cfg.name, step, k, above, &prof, eff, &hp))?;
        }
        // Per-PC profiles under the first op's primary basis.
        let primary = bases
            .iter()
            .find(|b| b.label() == primary_basis_label(ops[0]))
            .unwrap_or(&bases[0]);
        for (share, prof) in
            per_pc_profile(field, primary, dlog, 4).map_err(|e| anyhow::anyhow!("{e}"))?
        {
            let mut row = profile_row(&cfg.name, step, k, above, &prof, eff, &hp);
            row.push_str(&format!("pc_share={share:.4}"));
            profiles.append(&row)?;
        }

        let std2d = fourier2d(field);
        f2d.append(&format!(
            "{},{step},{k},input_2d,{:.6},{:.6e}",
            cfg.name, std2d.diagonal_fraction, std2d.total()
        ))?;
        if ops.contains(&OpKind::X2y2) {
            let ip = sqrt_minus_one(p).map_err(|e| anyhow::anyhow!("{e}"))?;
            let g2d = fourier2d_gaussian(field, dlog, ip).map_err(|e| anyhow::anyhow!("{e}"))?;
            f2d.append(&format!(
                "{},{step},{k},gaussian_2d,{:.6},{:.6e}",
                cfg.name, g2d.diagonal_fraction, g2d.total()
            ))?;
        }
    }
    profiles.flush()?;
    f2d.flush()?;
    power_csv.flush()?;
    println!("[analyze] wrote {}", dir.profiles_path().display());
    Ok(())
}

fn profile_row(
    run: &str,
    step: usize,
    k: usize,
    above: bool,
    prof: &FourierProfile,
    eff: f64,
    hp: &grokspectra::funcmode::HeadPurity,
) -> String {
    let top3 = prof
        .top3
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(";");
    format!(
        "{run},{step},{k},{above},{},{},{:.6},{},{top3},{:.6},{},{:.4},{:.6},{:.6},",
        prof.basis_label,
        prof.peak_omega,
        prof.concentration,
        prof.flat,
        prof.baseline(),
        prof.interpolated.len(),
        eff,
        hp.purity,
        hp.purity_by_matrix
    )
}

fn analyze_probes(
    dir: &RunDir,
    cfg: &RunConfig,
    fields: &[PerturbationField],
    dlog: &DlogTable,
    step: usize,
) -> Result<()> {
    let mut csv = CsvAppender::open(
        &dir.probes_path(),
        "run,step,k,kind,r2,train_r2,synergy,n_train,n_test",
    )?;
    let n_probe = fields.len().min(3);
    for kind in FeatureKind::ALL {
        let features: FeatureSet = build_features(kind, cfg.p, dlog);
        println!(
            "[analyze] probing {} ({} columns)",
            kind.name(),
            features.matrix.cols()
        );
        for (i, field) in fields.iter().take(n_probe).enumerate() {
            let out = probe_r2(&features, field, PROBE_LAMBDA, PROBE_SPLIT_SEED)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            csv.append(&format!(
                "{},{step},{},{},{:.6},{:.6},,{},{}",
                cfg.name,
                i + 1,
                kind.name(),
                out.r2,
                out.train_r2,
                out.n_train,
                out.n_test
            ))?;
        }
    }
    csv.flush()?;

    // Synergy rows from the recorded R2 values (per direction).
    let rows = fs::read_to_string(dir.probes_path())?;
    let mut synergy_csv = CsvAppender::open(&dir.probes_path(), "")?;
    for k in 1..=n_probe {
        let fetch = |kind: &str| -> Option<f64> {
            rows.lines()
                .filter(|l| {
                    let f: Vec<&str> = l.split(',').collect();
                    f.len() > 4
                        && f[0] == cfg.name
                        && f[1] == step.to_string()
                        && f[2] == k.to_string()
                        && f[3] == kind
                })
                .next_back()
                .and_then(|l| l.split(',').nth(4)?.parse().ok())
        };
        if let (Some(a), Some(m), Some(c)) =
            (fetch("additive"), fetch("multiplicative"), fetch("combined"))
        {
            let s = synergy(a, m, c);
            synergy_csv.append(&format!("{},{step},{k},synergy,,,{s:.6},,", cfg.name))?;
        }
    }
    synergy_csv.flush()?;
    println!("[analyze] wrote {}", dir.probes_path().display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn analyze_sae(
    dir: &RunDir,
    cfg: &RunConfig,
    model: &Model<f32>,
    ws: &mut Workspace<f32>,
    base: &ResidualGrid,
    saved: &SavedDirections,
    fields: &[PerturbationField],
    step: usize,
) -> Result<()> {
    let p = cfg.p;
    let d = model.cfg.d_model;
    // Train on the residuals of the train-split inputs.
    let task0 = cfg.tasks()?[0];
    let ds = make_dataset(&task0, cfg.seed);
    let mut train_rows = Vec::with_capacity(ds.train().len() * d);
    for &(a, b, _) in ds.train() {
        let idx = (a * p + b) as usize;
        train_rows.extend_from_slice(&base.rows[idx * d..(idx + 1) * d]);
    }
    let sae_cfg = SaeConfig { seed: cfg.seed, ..SaeConfig::default() };
    println!("[analyze] training TopK SAE ({} steps)", sae_cfg.steps);
    let sae = train_sae(&train_rows, d, &sae_cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
    println!("[analyze] SAE relative reconstruction error {:.4}", sae.final_rel_err);
    save_sae(dir, &sae, step, model)?;

    // Observed impact sets from the top-3 directions' perturbed residuals.
    let impact_of_field = |field: &PerturbationField, sae: &SaeModel| -> Vec<usize> {
        let perturbed: Vec<f32> =
            base.rows.iter().zip(&field.delta_h).map(|(&b, &d)| b + d).collect();
        feature_impact(sae, &base.rows, &perturbed, 20)
    };
    let n_obs = fields.len().min(3);
    let observed_sets: Vec<Vec<usize>> =
        fields.iter().take(n_obs).map(|f| impact_of_field(f, &sae)).collect();
    let mut observed_pairwise = Vec::new();
    for i in 0..n_obs {
        for j in (i + 1)..n_obs {
            observed_pairwise.push(jaccard(&observed_sets[i], &observed_sets[j]));
        }
    }

    // Random-direction null: impact sets of random unit directions.
    let layout = model.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ae5_ae5a);
    println!("[analyze] SAE random-direction null (50 directions)");
    let mut rand_sets = Vec::new();
    for _ in 0..50 {
        let v = random_unit(layout.dim(), &mut rng);
        let av = AttnVector { layout, data: v };
        let field = perturb_response(model, ws, base, &av, 0, PERTURB_SCALE)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        rand_sets.push(impact_of_field(&field, &sae));
    }
    let mut rand_jaccards = Vec::new();
    for i in 0..rand_sets.len() {
        for j in (i + 1)..rand_sets.len() {
            rand_jaccards.push(jaccard(&rand_sets[i], &rand_sets[j]));
        }
    }

    // Angle-matched null: triples with the observed 45-degree pairwise angle.
    println!("[analyze] SAE angle-matched null (200 triples)");
    let mut angle_null = Vec::new();
    for t in 0..200 {
        let triple = angle_matched_triple(layout.dim(), 45.0, &mut rng);
        let mut sets = Vec::new();
        for v in triple {
            let av = AttnVector { layout, data: v };
            let field = perturb_response(model, ws, base, &av, 0, PERTURB_SCALE)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            sets.push(impact_of_field(&field, &sae));
        }
        let mean = (jaccard(&sets[0], &sets[1])
            + jaccard(&sets[0], &sets[2])
            + jaccard(&sets[1], &sets[2]))
            / 3.0;
        angle_null.push(mean);
        if (t + 1) % 50 == 0 {
            println!("[analyze]   {} / 200 triples", t + 1);
        }
    }

    let report = NullReport::assemble(
        observed_pairwise,
        combinatorial_expected_jaccard(20, sae.d_sae),
        &rand_jaccards,
        angle_null,
    );
    let mut csv = CsvAppender::open(
        &dir.sae_nulls_path(),
        "run,step,pair,observed_j,observed_mean,combinatorial,random_mean,random_std,p_value,rel_err",
    )?;
    let pair_names = ["v1v2", "v1v3", "v2v3"];
    for (i, &j) in report.observed_pairwise.iter().enumerate() {
        csv.append(&format!(
            "{},{step},{},{j:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            cfg.name,
            pair_names.get(i).unwrap_or(&"pair"),
            report.observed_mean,
            report.combinatorial,
            report.random_direction_mean,
            report.random_direction_std,
            report.p_value,
            sae.final_rel_err,
        ))?;
    }
    csv.flush()?;
    println!(
        "[analyze] SAE nulls: observed mean {:.3}, random mean {:.3} (sd {:.3}), p = {:.3}",
        report.observed_mean,
        report.random_direction_mean,
        report.random_direction_std,
        report.p_value
    );
    let _ = saved;
    Ok(())
}

fn save_sae(dir: &RunDir, sae: &SaeModel, step: usize, model: &Model<f32>) -> Result<()> {
    let data = CheckpointData {
        d_model: sae.d_in as u32,
        n_heads: model.cfg.n_heads as u32,
        d_ff: sae.d_sae as u32,
        n_layers: 1,
        vocab: model.cfg.vocab as u32,
        step: step as u32,
        task_count: sae.k as u32,
        sections: vec![
            ("sae.mean".to_string(), sae.mean.clone()),
            ("sae.w_enc".to_string(), sae.w_enc.clone()),
            ("sae.b_enc".to_string(), sae.b_enc.clone()),
            ("sae.w_dec".to_string(), sae.w_dec.clone()),
            ("sae.rel_err".to_string(), vec![sae.final_rel_err as f32]),
        ],
    };
    write_checkpoint_file(&dir.sae_model_path(), &data)
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    use rand_distr::StandardNormal;
    use rand::Rng;
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / norm) as f32).collect()
}

fn analyze_cousage(
    dir: &RunDir,
    cfg: &RunConfig,
    model: &Model<f32>,
    saved: &SavedDirections,
    step: usize,
) -> Result<()> {
    let tasks = cfg.tasks()?;
    let n_dirs = saved.directions.len();
    println!("[analyze] co-usage over {} directions", n_dirs);

    // Per-task activations over sampled test inputs.
    let mut per_task = Vec::new();
    for (t, task) in tasks.iter().enumerate() {
        let ds = make_dataset(task, cfg.seed);
        let inputs = sample_inputs(ds.test(), COUSAGE_SAMPLE);
        per_task.push(per_example_activation(model, &inputs, t, &saved.directions));
    }

    // Concatenate tasks for the correlation structure.
    let total_rows: usize = per_task.iter().map(|m| m.rows()).sum();
    let mut all = grokspectra::numcore::Mat::zeros(total_rows, n_dirs);
    let mut row = 0;
    for acts in &per_task {
        for i in 0..acts.rows() {
            for k in 0..n_dirs {
                all.set(row, k, acts.get(i, k));
            }
            row += 1;
        }
    }
    let co = cousage_matrix(&all, DOMINANCE_HALF_WIDTH).map_err(|e| anyhow::anyhow!("{e}"))?;
    let usage = task_usage(&per_task);

    let mut csv = CsvAppender::open(
        &dir.cousage_path(),
        "run,step,k,above_edge,sigma,sigma_times_dk,d_k,zero_variance,usage,sharedness",
    )?;
    for k in 0..n_dirs {
        let urow: Vec<f64> = (0..tasks.len()).map(|o| usage.get(o, k)).collect();
        let s = if tasks.len() > 1 { sharedness(&urow).ok() } else { None };
        let sigma = saved.eigenvalues.get(k).copied().unwrap_or(0.0);
        let dk = co.diagonal_dominance[k];
        csv.append(&format!(
            "{},{step},{},{},{:.6e},{:.6e},{:.6},{},{},{}",
            cfg.name,
            k + 1,
            k + 1 <= saved.edge_k,
            sigma,
            sigma * dk,
            dk,
            co.zero_variance[k],
            urow.iter().map(|u| format!("{u:.6e}")).collect::<Vec<_>>().join(";"),
            s.map(|v| format!("{v:.6}")).unwrap_or_default(),
        ))?;
    }
    csv.flush()?;
    println!("[analyze] wrote {}", dir.cousage_path().display());
    Ok(())
}
