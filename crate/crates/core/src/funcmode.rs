//! Functional-mode analysis of spectral-edge directions: perturbation
//! responses over the full input grid, group-averaged Fourier profiles in the
//! symmetry-adapted bases, 2D spectra, per-PC profiles, displacement
//! effective rank, and head purity.

use crate::groupmath::{DlogTable, GroupError, GroupingBasis};
use crate::model::{forward_batch, AttnVector, Model, Real, Workspace};
use crate::numcore::{dft_power, effective_rank, sym_eig, Mat, NumError, PowerSpectrum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FuncError {
    #[error("direction has norm {0}, expected unit")]
    NonUnitDirection(f64),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("field size {0} does not match p^2 = {1}")]
    FieldShape(usize, usize),
}

/// Residual-stream rows (position 0) for every input pair, row-major in
/// `a * p + b` order.
#[derive(Debug, Clone)]
pub struct ResidualGrid {
    pub p: u32,
    pub d_model: usize,
    pub rows: Vec<f32>,
}

/// Residual at position 0 for all p^2 inputs. The grid does not depend on
/// the task head, so it serves every task of a multitask model.
pub fn residual_grid<F: Real>(model: &Model<F>, ws: &mut Workspace<F>) -> ResidualGrid {
    let p = model.cfg.vocab as u32;
    let d = model.cfg.d_model;
    let inputs: Vec<(u32, u32, u32)> =
        (0..p).flat_map(|a| (0..p).map(move |b| (a, b, 0))).collect();
    let mut rows = Vec::with_capacity(inputs.len() * d);
    for chunk in inputs.chunks(ws.cap) {
        forward_batch(model, ws, chunk, 0, false);
        for i in 0..chunk.len() {
            rows.extend(ws.residual_pos0(i).iter().map(|v| v.as_f32()));
        }
    }
    ResidualGrid { p, d_model: d, rows }
}

/// Per-input displacement of the position-0 residual under a perturbation
/// along one direction, and its scalar field.
#[derive(Debug, Clone)]
pub struct PerturbationField {
    /// 1-based direction index k (0 for synthetic fields).
    pub direction_index: usize,
    pub epsilon: f64,
    pub p: u32,
    pub d_model: usize,
    /// Row-major `(a * p + b) * d_model + j`.
    pub delta_h: Vec<f32>,
    /// f(a, b) = squared norm of the displacement row.
    pub f: Vec<f64>,
}

impl PerturbationField {
    /// Build from displacement rows; `f` is derived exactly.
    pub fn from_delta(
        direction_index: usize,
        epsilon: f64,
        p: u32,
        d_model: usize,
        delta_h: Vec<f32>,
    ) -> Self {
        let n = (p * p) as usize;
        assert_eq!(delta_h.len(), n * d_model);
        let f = (0..n)
            .map(|i| {
                delta_h[i * d_model..(i + 1) * d_model]
                    .iter()
                    .map(|&v| v as f64 * v as f64)
                    .sum()
            })
            .collect();
        PerturbationField { direction_index, epsilon, p, d_model, delta_h, f }
    }

    /// A synthetic scalar field for calibration; displacements are a single
    /// coordinate carrying sqrt(f).
    pub fn synthetic(p: u32, f: Vec<f64>) -> Self {
        assert_eq!(f.len(), (p * p) as usize);
        let delta_h = f.iter().map(|&v| (v.max(0.0)).sqrt() as f32).collect();
        PerturbationField { direction_index: 0, epsilon: 0.0, p, d_model: 1, delta_h, f }
    }
}

/// Default perturbation scale: epsilon = 0.005 * |theta_attn|.
pub const PERTURB_SCALE: f64 = 0.005;

/// Evaluate the perturbation response along a unit direction. The model is
/// copied internally; the caller's model is untouched.
pub fn perturb_response<F: Real>(
    model: &Model<F>,
    ws: &mut Workspace<F>,
    base: &ResidualGrid,
    v: &AttnVector,
    direction_index: usize,
    scale: f64,
) -> Result<PerturbationField, FuncError> {
    let norm = v.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(FuncError::NonUnitDirection(norm));
    }
    let epsilon = scale * model.attn_norm();
    let mut perturbed = model.clone();
    perturbed.add_attn(v, epsilon);
    let shifted = residual_grid(&perturbed, ws);
    let delta: Vec<f32> =
        shifted.rows.iter().zip(&base.rows).map(|(&s, &b)| s - b).collect();
    Ok(PerturbationField::from_delta(direction_index, epsilon, base.p, base.d_model, delta))
}

/// Group-averaged Fourier profile of a scalar field under one basis.
#[derive(Debug, Clone)]
pub struct FourierProfile {
    pub basis_label: String,
    pub period: u32,
    pub group_means: Vec<f64>,
    pub class_counts: Vec<usize>,
    /// Classes that were empty under the mask, filled by cyclic interpolation.
    pub interpolated: Vec<u32>,
    pub spectrum: PowerSpectrum,
    pub peak_omega: usize,
    /// Fraction of retained power at the peak; 0 when the signal is flat to
    /// rounding (see `flat`).
    pub concentration: f64,
    pub flat: bool,
    pub top3: Vec<usize>,
    pub masked_pairs: usize,
}

impl FourierProfile {
    /// Uniform baseline F = 2/M.
    pub fn baseline(&self) -> f64 {
        2.0 / self.period as f64
    }

    /// Fraction of retained power at an arbitrary frequency.
    pub fn fraction_at(&self, omega: usize) -> f64 {
        if self.flat {
            0.0
        } else {
            self.spectrum.fraction_at(omega)
        }
    }
}

/// Group-average a scalar field over the basis classes and take the DFT
/// power spectrum. Total retained power at or below the rounding floor of
/// the signal is reported as flat (F = 0).
pub fn fourier_profile_scalar(
    values: &[f64],
    p: u32,
    basis: &GroupingBasis,
    dlog: &DlogTable,
    label: &str,
) -> Result<FourierProfile, FuncError> {
    let n = (p * p) as usize;
    if values.len() != n {
        return Err(FuncError::FieldShape(values.len(), n));
    }
    let m = basis.period as usize;
    let mut sums = vec![0.0f64; m];
    let mut counts = vec![0usize; m];
    let mut masked_pairs = 0usize;
    for a in 0..p {
        for b in 0..p {
            if !basis.admits(a, b) {
                continue;
            }
            let q = basis.grouping_value(dlog, a, b)? as usize;
            sums[q] += values[(a * p + b) as usize];
            counts[q] += 1;
            masked_pairs += 1;
        }
    }
    let mut means = vec![0.0f64; m];
    let mut interpolated = Vec::new();
    for q in 0..m {
        if counts[q] > 0 {
            means[q] = sums[q] / counts[q] as f64;
        }
    }
    for q in 0..m {
        if counts[q] == 0 {
            means[q] = cyclic_interpolate(&counts, &means, q);
            interpolated.push(q as u32);
        }
    }

    let spectrum = dft_power(&means)?;
    let total = spectrum.total();
    let sum_abs: f64 = means.iter().map(|v| v.abs()).sum();
    let floor = (1e-9 * sum_abs) * (1e-9 * sum_abs);
    let flat = total <= floor;
    let (peak_omega, concentration, top3) = if flat {
        (0, 0.0, Vec::new())
    } else {
        let (w, pk) = spectrum.peak();
        (w, pk / total, spectrum.top_frequencies(3))
    };
    Ok(FourierProfile {
        basis_label: label.to_string(),
        period: basis.period,
        group_means: means,
        class_counts: counts,
        interpolated,
        spectrum,
        peak_omega,
        concentration,
        flat,
        top3,
        masked_pairs,
    })
}

/// Linear interpolation across the cyclic index between the nearest
/// non-empty classes on each side.
fn cyclic_interpolate(counts: &[usize], means: &[f64], q: usize) -> f64 {
    let m = counts.len();
    let mut left = None;
    for d in 1..m {
        let idx = (q + m - d) % m;
        if counts[idx] > 0 {
            left = Some((d, means[idx]));
            break;
        }
    }
    let mut right = None;
    for d in 1..m {
        let idx = (q + d) % m;
        if counts[idx] > 0 {
            right = Some((d, means[idx]));
            break;
        }
    }
    match (left, right) {
        (Some((dl, vl)), Some((dr, vr))) => {
            let span = (dl + dr) as f64;
            vl * (dr as f64 / span) + vr * (dl as f64 / span)
        }
        (Some((_, v)), None) | (None, Some((_, v))) => v,
        (None, None) => 0.0,
    }
}

/// Profile of a perturbation field under a basis.
pub fn fourier_profile(
    field: &PerturbationField,
    basis: &GroupingBasis,
    dlog: &DlogTable,
) -> Result<FourierProfile, FuncError> {
    fourier_profile_scalar(&field.f, field.p, basis, dlog, &basis.label())
}

/// 2D power spectrum of a mean-removed scalar grid.
#[derive(Debug, Clone)]
pub struct Fourier2d {
    pub m: usize,
    /// Row-major power at (omega_a, omega_b), both in 0..m.
    pub power: Vec<f64>,
    /// Fraction of non-DC power on the diagonal omega_a = omega_b.
    pub diagonal_fraction: f64,
}

impl Fourier2d {
    pub fn at(&self, wa: usize, wb: usize) -> f64 {
        self.power[wa * self.m + wb]
    }

    /// Total non-DC power.
    pub fn total(&self) -> f64 {
        let mut t = 0.0;
        for wa in 0..self.m {
            for wb in 0..self.m {
                if wa == 0 && wb == 0 {
                    continue;
                }
                t += self.at(wa, wb);
            }
        }
        t
    }
}

fn fourier2d_grid(grid: &[f64], m: usize) -> Fourier2d {
    let mean = grid.iter().sum::<f64>() / (m * m) as f64;
    let centered: Vec<f64> = grid.iter().map(|v| v - mean).collect();
    // Row-column decomposition of the 2D DFT.
    let mut re = vec![0.0f64; m * m];
    let mut im = vec![0.0f64; m * m];
    for a in 0..m {
        for wb in 0..m {
            let (mut r, mut i) = (0.0, 0.0);
            for b in 0..m {
                let ang = -2.0 * std::f64::consts::PI * (wb * b % m) as f64 / m as f64;
                r += centered[a * m + b] * ang.cos();
                i += centered[a * m + b] * ang.sin();
            }
            re[a * m + wb] = r;
            im[a * m + wb] = i;
        }
    }
    let mut power = vec![0.0f64; m * m];
    for wb in 0..m {
        for wa in 0..m {
            let (mut r, mut i) = (0.0, 0.0);
            for a in 0..m {
                let ang = -2.0 * std::f64::consts::PI * (wa * a % m) as f64 / m as f64;
                let (c, s) = (ang.cos(), ang.sin());
                r += re[a * m + wb] * c - im[a * m + wb] * s;
                i += re[a * m + wb] * s + im[a * m + wb] * c;
            }
            power[wa * m + wb] = r * r + i * i;
        }
    }
    let mut total = 0.0;
    let mut diag = 0.0;
    for wa in 0..m {
        for wb in 0..m {
            if wa == 0 && wb == 0 {
                continue;
            }
            total += power[wa * m + wb];
            if wa == wb {
                diag += power[wa * m + wb];
            }
        }
    }
    Fourier2d { m, power, diagonal_fraction: if total > 0.0 { diag / total } else { 0.0 } }
}

/// 2D spectrum over the raw input coordinates (a, b).
pub fn fourier2d(field: &PerturbationField) -> Fourier2d {
    fourier2d_grid(&field.f, field.p as usize)
}

/// 2D spectrum over the Gaussian-integer coordinates (dlog u, dlog v),
/// restricted to masked pairs; unoccupied cells take the mean of occupied
/// cells so they vanish after mean removal.
pub fn fourier2d_gaussian(
    field: &PerturbationField,
    dlog: &DlogTable,
    sqrt_minus_one: u32,
) -> Result<Fourier2d, FuncError> {
    let p = field.p;
    let m = (p - 1) as usize;
    let mut sums = vec![0.0f64; m * m];
    let mut counts = vec![0usize; m * m];
    for a in 0..p {
        for b in 0..p {
            let u = (a as u64 + sqrt_minus_one as u64 * b as u64) % p as u64;
            let v =
                (a as u64 + (p as u64 - sqrt_minus_one as u64) * b as u64 % p as u64) % p as u64;
            if u == 0 || v == 0 {
                continue;
            }
            let du = dlog.dlog(u as u32)? as usize;
            let dv = dlog.dlog(v as u32)? as usize;
            sums[du * m + dv] += field.f[(a * p + b) as usize];
            counts[du * m + dv] += 1;
        }
    }
    let mut occupied = 0usize;
    let mut mean_total = 0.0f64;
    for i in 0..m * m {
        if counts[i] > 0 {
            occupied += 1;
            mean_total += sums[i] / counts[i] as f64;
        }
    }
    let fill = if occupied > 0 { mean_total / occupied as f64 } else { 0.0 };
    let grid: Vec<f64> = (0..m * m)
        .map(|i| if counts[i] > 0 { sums[i] / counts[i] as f64 } else { fill })
        .collect();
    Ok(fourier2d_grid(&grid, m))
}

/// Profiles of the squared projections onto the top principal components of
/// the displacement matrix, with each component's share of total variance.
pub fn per_pc_profile(
    field: &PerturbationField,
    basis: &GroupingBasis,
    dlog: &DlogTable,
    n_pcs: usize,
) -> Result<Vec<(f64, FourierProfile)>, FuncError> {
    let n = (field.p * field.p) as usize;
    let d = field.d_model;
    // Uncentered second-moment PCA so a rank-1 field's PC1 signal equals f.
    let mut cov = Mat::zeros(d, d);
    for i in 0..n {
        let row = &field.delta_h[i * d..(i + 1) * d];
        for a in 0..d {
            let ra = row[a] as f64;
            if ra == 0.0 {
                continue;
            }
            for b in a..d {
                cov.set(a, b, cov.get(a, b) + ra * row[b] as f64);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov.set(a, b, cov.get(b, a));
        }
    }
    let spec = sym_eig(&cov)?;
    let total: f64 = spec.values.iter().map(|&v| v.max(0.0)).sum();
    let vecs = spec.vectors.as_ref().expect("sym_eig returns vectors");
    let mut out = Vec::new();
    for pc in 0..n_pcs.min(d) {
        let axis: Vec<f64> = (0..d).map(|i| vecs.get(i, pc)).collect();
        let signal: Vec<f64> = (0..n)
            .map(|i| {
                let row = &field.delta_h[i * d..(i + 1) * d];
                let proj: f64 = row.iter().zip(&axis).map(|(&r, &a)| r as f64 * a).sum();
                proj * proj
            })
            .collect();
        let label = format!("{}__pc{}", basis.label(), pc + 1);
        let profile = fourier_profile_scalar(&signal, field.p, basis, dlog, &label)?;
        let share = if total > 0.0 { spec.values[pc].max(0.0) / total } else { 0.0 };
        out.push((share, profile));
    }
    Ok(out)
}

/// Effective rank of the mean-centered displacement matrix.
pub fn field_effective_rank(field: &PerturbationField) -> Result<f64, FuncError> {
    let n = (field.p * field.p) as usize;
    let d = field.d_model;
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(&field.delta_h[i * d..(i + 1) * d]) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = Mat::zeros(d, d);
    for i in 0..n {
        let row = &field.delta_h[i * d..(i + 1) * d];
        for a in 0..d {
            let ra = row[a] as f64 - mean[a];
            for b in a..d {
                cov.set(a, b, cov.get(a, b) + ra * (row[b] as f64 - mean[b]));
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov.set(a, b, cov.get(b, a));
        }
    }
    let spec = sym_eig(&cov)?;
    let singular: Vec<f64> = spec.values.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok(effective_rank(&singular)?)
}

/// Head attribution of a parameter-space direction.
#[derive(Debug, Clone)]
pub struct HeadPurity {
    /// Max (layer, head) squared-mass fraction; uniform baseline is
    /// 1 / (layers * heads).
    pub purity: f64,
    pub argmax: (usize, usize),
    /// Max over the finer (layer, head, matrix) cells; baseline 1/32.
    pub purity_by_matrix: f64,
    pub argmax_by_matrix: (usize, usize, crate::model::AttnMat),
}

/// Fraction of squared mass in the most-loaded (layer, head) cell, where a
/// head owns its column slices of Q/K/V and its row slice of O.
pub fn head_purity(v: &AttnVector) -> Result<HeadPurity, FuncError> {
    let total: f64 = v.data.iter().map(|&x| x as f64 * x as f64).sum();
    if !(total > 0.0) {
        return Err(FuncError::NonUnitDirection(0.0));
    }
    let layout = v.layout;
    let mut best = (0.0, (0, 0));
    let mut best32 = (0.0, (0, 0, crate::model::AttnMat::Q));
    for layer in 0..layout.n_layers {
        for head in 0..layout.n_heads {
            let mass = layout.head_mass(&v.data, layer, head);
            if mass > best.0 {
                best = (mass, (layer, head));
            }
            for mat in crate::model::AttnMat::ALL {
                let mm = layout.head_mat_mass(&v.data, layer, head, mat);
                if mm > best32.0 {
                    best32 = (mm, (layer, head, mat));
                }
            }
        }
    }
    Ok(HeadPurity {
        purity: best.0 / total,
        argmax: best.1,
        purity_by_matrix: best32.0 / total,
        argmax_by_matrix: best32.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groupmath::{DlogTable, GroupingBasis};
    use crate::model::{AttnLayout, AttnMat, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone_field(p: u32, omega: f64, offset: f64) -> PerturbationField {
        let f: Vec<f64> = (0..p)
            .flat_map(|a| {
                (0..p).map(move |b| {
                    offset
                        + (2.0 * std::f64::consts::PI * omega * ((a + b) % p) as f64 / p as f64)
                            .cos()
                })
            })
            .collect();
        PerturbationField::synthetic(p, f)
    }

    #[test]
    fn pure_tone_profile_concentrates() {
        let p = 97;
        let dlog = DlogTable::new(p).unwrap();
        let basis = GroupingBasis::additive_sum(p);
        let field = tone_field(p, 26.0, 2.0);
        let prof = fourier_profile(&field, &basis, &dlog).unwrap();
        assert_eq!(prof.peak_omega, 26);
        assert!(prof.concentration > 0.999, "F = {}", prof.concentration);
        assert!(!prof.flat);
        assert_eq!(prof.masked_pairs, 9409);
        assert!(prof.interpolated.is_empty());
    }

    #[test]
    fn cosine_squared_aliases_to_folded_bin() {
        // cos^2(2pi*26*q/97) = 1/2 + cos(2pi*52*q/97)/2; the 52-cycle tone
        // folds onto bin 97 - 52 = 45 in the retained half-spectrum.
        let p = 97u32;
        let f: Vec<f64> = (0..p)
            .flat_map(|a| {
                (0..p).map(move |b| {
                    let c = (2.0 * std::f64::consts::PI * 26.0 * ((a + b) % p) as f64
                        / p as f64)
                        .cos();
                    c * c
                })
            })
            .collect();
        let field = PerturbationField::synthetic(p, f);
        let dlog = DlogTable::new(p).unwrap();
        let prof = fourier_profile(&field, &GroupingBasis::additive_sum(p), &dlog).unwrap();
        assert_eq!(prof.peak_omega, 45);
        assert!(prof.concentration > 0.999);
    }

    #[test]
    fn constant_field_is_flat() {
        let p = 53;
        let dlog = DlogTable::new(p).unwrap();
        let basis = GroupingBasis::additive_sum(p);
        for offset in [0.0, 1.0, 3.7e4] {
            let field = PerturbationField::synthetic(p, vec![offset; (p * p) as usize]);
            let prof = fourier_profile(&field, &basis, &dlog).unwrap();
            assert!(prof.flat, "offset {offset} not flat");
            assert_eq!(prof.concentration, 0.0);
        }
    }

    #[test]
    fn profile_invariant_to_shift_and_equivariant_to_relabeling() {
        let p = 29;
        let dlog = DlogTable::new(p).unwrap();
        let basis = GroupingBasis::additive_sum(p);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<f64> = (0..p * p).map(|_| rng.gen_range(0.0..2.0)).collect();
        let base =
            fourier_profile(&PerturbationField::synthetic(p, f.clone()), &basis, &dlog).unwrap();
        let shifted: Vec<f64> = f.iter().map(|v| v + 11.0).collect();
        let prof2 =
            fourier_profile(&PerturbationField::synthetic(p, shifted), &basis, &dlog).unwrap();
        for (a, b) in base.spectrum.power.iter().zip(&prof2.spectrum.power) {
            assert!((a - b).abs() < 1e-6 * a.max(1.0));
        }
        // Relabeling q -> q + s (rotate a by s) leaves the power unchanged.
        let s = 7u32;
        let rotated: Vec<f64> = (0..p)
            .flat_map(|a| {
                let f = &f;
                (0..p).map(move |b| f[((((a + s) % p) * p) + b) as usize])
            })
            .collect();
        let prof3 =
            fourier_profile(&PerturbationField::synthetic(p, rotated), &basis, &dlog).unwrap();
        for (a, b) in base.spectrum.power.iter().zip(&prof3.spectrum.power) {
            assert!((a - b).abs() < 1e-6 * a.max(1.0));
        }
    }

    #[test]
    fn dlog_mask_excludes_zero_rows() {
        // A spike at (0, 5) is outside the dlog-sum mask, so the masked
        // profile sees a constant field.
        let p = 13;
        let dlog = DlogTable::new(p).unwrap();
        let basis = GroupingBasis::dlog_sum_inputs(p);
        let mut f = vec![1.0f64; (p * p) as usize];
        f[5] = 100.0;
        let field = PerturbationField::synthetic(p, f);
        let prof = fourier_profile(&field, &basis, &dlog).unwrap();
        assert_eq!(prof.masked_pairs, ((p - 1) * (p - 1)) as usize);
        assert!(prof.flat);
    }

    #[test]
    fn cross_basis_control_additive_tone_weak_under_dlog() {
        let p = 97;
        let dlog = DlogTable::new(p).unwrap();
        let field = tone_field(p, 26.0, 2.0);
        let add = fourier_profile(&field, &GroupingBasis::additive_sum(p), &dlog).unwrap();
        let mul = fourier_profile(&field, &GroupingBasis::dlog_sum_inputs(p), &dlog).unwrap();
        assert!(
            mul.concentration <= 0.5 * add.concentration,
            "dlog F {} vs additive F {}",
            mul.concentration,
            add.concentration
        );
    }

    #[test]
    fn fourier2d_diagonal_and_axis() {
        let p = 29u32;
        let tone = tone_field(p, 5.0, 1.0);
        let f2 = fourier2d(&tone);
        assert!(f2.diagonal_fraction > 0.999, "{}", f2.diagonal_fraction);
        assert!(f2.at(5, 5) > 0.0);

        let fa: Vec<f64> = (0..p)
            .flat_map(|a| {
                (0..p).map(move |_b| {
                    (2.0 * std::f64::consts::PI * 5.0 * a as f64 / p as f64).cos()
                })
            })
            .collect();
        let axis = fourier2d(&PerturbationField::synthetic(p, fa));
        assert!(axis.diagonal_fraction < 1e-6, "{}", axis.diagonal_fraction);
        assert!(axis.at(5, 0) > 0.0);
    }

    #[test]
    fn fourier2d_matches_naive_double_sum() {
        let p = 7u32;
        let m = p as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f: Vec<f64> = (0..m * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = fourier2d(&PerturbationField::synthetic(p, f.clone()));
        let mean = f.iter().sum::<f64>() / (m * m) as f64;
        for wa in 0..m {
            for wb in 0..m {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for a in 0..m {
                    for b in 0..m {
                        let ang =
                            -2.0 * std::f64::consts::PI * (wa * a + wb * b) as f64 / m as f64;
                        re += (f[a * m + b] - mean) * ang.cos();
                        im += (f[a * m + b] - mean) * ang.sin();
                    }
                }
                let want = re * re + im * im;
                assert!(
                    (got.at(wa, wb) - want).abs() < 1e-8 * want.max(1.0),
                    "({wa},{wb}): {} vs {want}",
                    got.at(wa, wb)
                );
            }
        }
    }

    #[test]
    fn per_pc_rank_one_field() {
        let p = 11u32;
        let d = 4usize;
        let n = (p * p) as usize;
        let u = [0.5f32, -0.5, 0.5, 0.5];
        let mut delta = vec![0.0f32; n * d];
        for i in 0..n {
            let c = 1.0 + (i % 7) as f32;
            for j in 0..d {
                delta[i * d + j] = c * u[j];
            }
        }
        let field = PerturbationField::from_delta(1, 0.01, p, d, delta);
        let dlog = DlogTable::new(p).unwrap();
        let basis = GroupingBasis::additive_sum(p);
        let pcs = per_pc_profile(&field, &basis, &dlog, 2).unwrap();
        assert!(pcs[0].0 > 0.999, "PC1 variance share {}", pcs[0].0);
        // PC1 profile equals the field's own profile for a rank-1 field.
        let own = fourier_profile(&field, &basis, &dlog).unwrap();
        for (a, b) in pcs[0].1.group_means.iter().zip(&own.group_means) {
            assert!((a - b).abs() < 1e-5 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn pcs_are_orthonormal() {
        let p = 7u32;
        let d = 6usize;
        let n = (p * p) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let delta: Vec<f32> = (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let field = PerturbationField::from_delta(1, 0.01, p, d, delta);
        // Recompute the PCA the same way and check the axes directly.
        let mut cov = Mat::zeros(d, d);
        for i in 0..n {
            let row = &field.delta_h[i * d..(i + 1) * d];
            for a in 0..d {
                for b in 0..d {
                    cov.set(a, b, cov.get(a, b) + row[a] as f64 * row[b] as f64);
                }
            }
        }
        let spec = sym_eig(&cov).unwrap();
        let v = spec.vectors.unwrap();
        for i in 0..d {
            for j in i..d {
                let dot: f64 = (0..d).map(|r| v.get(r, i) * v.get(r, j)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn field_effective_rank_extremes() {
        let p = 13u32;
        let d = 16usize;
        let n = (p * p) as usize;
        let mut delta = vec![0.0f32; n * d];
        for i in 0..n {
            delta[i * d] = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let field = PerturbationField::from_delta(1, 0.01, p, d, delta);
        let r = field_effective_rank(&field).unwrap();
        assert!((r - 1.0).abs() < 1e-6, "rank-1 field gave {r}");

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise: Vec<f32> = (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let field = PerturbationField::from_delta(1, 0.01, p, d, noise);
        let r = field_effective_rank(&field).unwrap();
        assert!((r - d as f64).abs() / (d as f64) < 0.10, "noise field gave {r}");
    }

    #[test]
    fn head_purity_extremes() {
        let layout = AttnLayout { n_layers: 2, d_model: 8, n_heads: 4 };
        let v = AttnVector { layout, data: vec![1.0; layout.dim()] };
        let hp = head_purity(&v).unwrap();
        assert!((hp.purity - 1.0 / 8.0).abs() < 1e-6);
        assert!((hp.purity_by_matrix - 1.0 / 32.0).abs() < 1e-6);

        let mut data = vec![0.0f32; layout.dim()];
        let d = layout.d_model;
        let dh = d / layout.n_heads;
        let (layer, head) = (1, 2);
        for mat in AttnMat::ALL {
            let range = layout.block_range(layer, mat);
            let block = &mut data[range];
            for r in 0..d {
                for c in 0..d {
                    let inside = match mat {
                        AttnMat::O => r >= head * dh && r < (head + 1) * dh,
                        _ => c >= head * dh && c < (head + 1) * dh,
                    };
                    if inside {
                        block[r * d + c] = 1.0;
                    }
                }
            }
        }
        let hp = head_purity(&AttnVector { layout, data }).unwrap();
        assert!((hp.purity - 1.0).abs() < 1e-9);
        assert_eq!(hp.argmax, (layer, head));

        let v = AttnVector {
            layout,
            data: (0..layout.dim()).map(|i| ((i * 37) % 11) as f32 - 5.0).collect(),
        };
        let a = head_purity(&v).unwrap();
        let scaled = AttnVector { layout, data: v.data.iter().map(|&x| x * 3.5).collect() };
        let b = head_purity(&scaled).unwrap();
        assert!((a.purity - b.purity).abs() < 1e-9);
    }

    #[test]
    fn perturbation_zero_effect_direction() {
        // With all value projections zeroed, attention output is identically
        // zero, so perturbing only Q and K blocks cannot move the residual.
        let cfg = ModelConfig::toy(5);
        let mut model: crate::model::Model<f32> = crate::model::Model::build(&cfg, 1).unwrap();
        for (name, buf) in model.params_mut().iter_mut() {
            if name.contains("attn.wv") {
                buf.fill(0.0);
            }
        }
        let layout = model.layout();
        let mut data = vec![0.0f32; layout.dim()];
        for layer in 0..layout.n_layers {
            for mat in [AttnMat::Q, AttnMat::K] {
                for i in layout.block_range(layer, mat) {
                    data[i] = 1.0;
                }
            }
        }
        let v = AttnVector { layout, data }.normalized().unwrap();
        let mut ws = Workspace::new(&model, 25);
        let base = residual_grid(&model, &mut ws);
        let field = perturb_response(&model, &mut ws, &base, &v, 1, 0.05).unwrap();
        assert_eq!(field.f.len(), 25);
        let max_f = field.f.iter().cloned().fold(0.0f64, f64::max);
        assert!(max_f <= 1e-10, "zero-effect direction moved the residual: {max_f}");
        assert!(field.f.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn perturbation_scales_quadratically_in_epsilon() {
        let cfg = ModelConfig::toy(5);
        let model: crate::model::Model<f32> = crate::model::Model::build(&cfg, 1).unwrap();
        let layout = model.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = AttnVector {
            layout,
            data: (0..layout.dim()).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        }
        .normalized()
        .unwrap();
        let mut ws = Workspace::new(&model, 25);
        let base = residual_grid(&model, &mut ws);
        let full = perturb_response(&model, &mut ws, &base, &v, 1, 0.02).unwrap();
        let half = perturb_response(&model, &mut ws, &base, &v, 1, 0.01).unwrap();
        let mean_full: f64 = full.f.iter().sum::<f64>() / full.f.len() as f64;
        let mean_half: f64 = half.f.iter().sum::<f64>() / half.f.len() as f64;
        let ratio = mean_full / mean_half;
        assert!((ratio - 4.0).abs() < 1.0, "quadratic scaling violated: ratio {ratio}");

        // Sign near-symmetry at small epsilon.
        let flipped = AttnVector { layout, data: v.data.iter().map(|&x| -x).collect() };
        let neg = perturb_response(&model, &mut ws, &base, &flipped, 1, 0.01).unwrap();
        let mean_neg: f64 = neg.f.iter().sum::<f64>() / neg.f.len() as f64;
        let rel = (mean_neg - mean_half).abs() / mean_half;
        assert!(rel < 0.2, "sign asymmetry {rel}");
    }
}
