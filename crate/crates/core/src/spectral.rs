//! Spectral-edge machinery over the stream of attention-parameter updates:
//! sliding-window Gram spectra, gap tracking, edge position and directions,
//! gap-decline measurement, displacement PCA, and per-weight-matrix SVD
//! degeneracy.

use crate::model::{AttnMat, AttnVector, CheckpointData};
use crate::numcore::{self, sym_eig, thin_svd, Mat, NumError};
use thiserror::Error;

/// Sliding-window length W.
pub const WINDOW: usize = 20;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("window holds {0} of {1} updates")]
    WindowNotFull(usize, usize),
    #[error("gram matrix has a significantly negative eigenvalue {0:.3e} (sigma1 = {1:.3e})")]
    NegativeEigenvalue(f64, f64),
    #[error("requested {0} directions but the window has numerical rank {1}")]
    RankExceeded(usize, usize),
    #[error("all-zero spectrum")]
    ZeroSpectrum,
    #[error("empty averaging window: {0}")]
    EmptyWindow(&'static str),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Ring buffer of the last `capacity` attention updates, oldest first.
#[derive(Debug, Clone)]
pub struct UpdateWindow {
    capacity: usize,
    entries: Vec<AttnVector>,
    start: usize,
    newest_step: usize,
}

impl UpdateWindow {
    pub fn new(capacity: usize) -> UpdateWindow {
        assert!(capacity >= 2);
        UpdateWindow { capacity, entries: Vec::new(), start: 0, newest_step: 0 }
    }

    pub fn push(&mut self, step: usize, delta: &AttnVector) {
        if self.entries.len() < self.capacity {
            self.entries.push(delta.clone());
        } else {
            self.entries[self.start].data.copy_from_slice(&delta.data);
            self.start = (self.start + 1) % self.capacity;
        }
        self.newest_step = step;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn newest_step(&self) -> usize {
        self.newest_step
    }

    /// Window entry in age order (0 = oldest).
    pub fn get(&self, i: usize) -> &AttnVector {
        assert!(i < self.entries.len());
        if self.entries.len() < self.capacity {
            &self.entries[i]
        } else {
            &self.entries[(self.start + i) % self.capacity]
        }
    }

    /// Oldest-first iteration.
    pub fn iter(&self) -> impl Iterator<Item = &AttnVector> {
        (0..self.len()).map(move |i| self.get(i))
    }
}

/// Eigenstructure of one window's Gram matrix.
#[derive(Debug, Clone)]
pub struct GramSpectrum {
    pub step: usize,
    /// Eigenvalues, descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// gaps[k] = sigma_{k+1} - sigma_{k+2} in 1-based terms, i.e. g_{k+1,k+2}.
    pub gaps: Vec<f64>,
    /// Edge position k* (1-based).
    pub edge_k: usize,
}

impl GramSpectrum {
    /// g_{23} = sigma_2 - sigma_3.
    pub fn g23(&self) -> f64 {
        self.gaps[1]
    }

    pub fn g12(&self) -> f64 {
        self.gaps[0]
    }
}

/// Gram matrix of the window (inner products of its update vectors).
fn window_gram(window: &UpdateWindow) -> Mat {
    let w = window.len();
    let mut g = Mat::zeros(w, w);
    for i in 0..w {
        for j in i..w {
            let dot = window.get(i).dot(window.get(j));
            g.set(i, j, dot);
            g.set(j, i, dot);
        }
    }
    g
}

/// Eigenvalues, gaps, and edge position of a full window.
pub fn gram_spectrum(window: &UpdateWindow) -> Result<GramSpectrum, SpectralError> {
    if !window.is_full() {
        return Err(SpectralError::WindowNotFull(window.len(), window.capacity()));
    }
    let g = window_gram(window);
    let spec = sym_eig(&g)?;
    let sigma1 = spec.values[0].max(0.0);
    let mut eigenvalues = Vec::with_capacity(spec.values.len());
    for &v in &spec.values {
        if v < -1e-10 * sigma1 {
            return Err(SpectralError::NegativeEigenvalue(v, sigma1));
        }
        eigenvalues.push(v.max(0.0));
    }
    let gaps: Vec<f64> =
        eigenvalues.windows(2).map(|w| (w[0] - w[1]).max(0.0)).collect();
    let edge_k = edge_position(&eigenvalues)?;
    Ok(GramSpectrum { step: window.newest_step(), eigenvalues, gaps, edge_k })
}

/// Edge position: argmax over k in 1..=W/2 of the gap ratio
/// `sigma_k / max(sigma_{k+1}, 1e-12 sigma_1)` weighted by the cumulative
/// signal mass `sum_{i<=k} sigma_i / sum_i sigma_i`. A spectrum that is flat
/// to within 1e-9 relative returns 1 by convention; exact product ties break
/// toward the smaller k.
pub fn edge_position(eigenvalues: &[f64]) -> Result<usize, SpectralError> {
    let w = eigenvalues.len();
    let sigma1 = eigenvalues[0];
    if !(sigma1 > 0.0) {
        return Err(SpectralError::ZeroSpectrum);
    }
    let last = eigenvalues[w - 1];
    if sigma1 - last <= 1e-9 * sigma1 {
        return Ok(1);
    }
    let total: f64 = eigenvalues.iter().sum();
    let floor = 1e-12 * sigma1;
    let mut best_k = 1;
    let mut best_score = f64::NEG_INFINITY;
    let mut cum = 0.0;
    for k in 1..=(w / 2).max(1) {
        cum += eigenvalues[k - 1];
        let denom = eigenvalues[k].max(floor);
        let score = (eigenvalues[k - 1] / denom) * (cum / total);
        if score > best_score {
            best_score = score;
            best_k = k;
        }
    }
    Ok(best_k)
}

/// The first k right singular vectors of the stacked update matrix, through
/// the Gram eigenpairs: `v_j = Delta^T u_j / sqrt(sigma_j)`. Each vector is
/// unit norm with its largest-magnitude entry made positive.
pub fn edge_directions(window: &UpdateWindow, k: usize) -> Result<Vec<Vec<f64>>, SpectralError> {
    if !window.is_full() {
        return Err(SpectralError::WindowNotFull(window.len(), window.capacity()));
    }
    let w = window.len();
    let g = window_gram(window);
    let spec = sym_eig(&g)?;
    let sigma1 = spec.values[0].max(0.0);
    if !(sigma1 > 0.0) {
        return Err(SpectralError::ZeroSpectrum);
    }
    let rank = spec.values.iter().filter(|&&v| v > 1e-12 * sigma1).count();
    if k > rank {
        return Err(SpectralError::RankExceeded(k, rank));
    }
    let u = spec.vectors.as_ref().expect("sym_eig returns vectors");
    let dim = window.get(0).data.len();
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let sigma = spec.values[j];
        let inv_sqrt = 1.0 / sigma.sqrt();
        let mut v = vec![0.0f64; dim];
        for i in 0..w {
            let coeff = u.get(i, j) * inv_sqrt;
            if coeff == 0.0 {
                continue;
            }
            for (dst, &src) in v.iter_mut().zip(&window.get(i).data) {
                *dst += coeff * src as f64;
            }
        }
        // Sign convention: largest-magnitude entry positive.
        let mut arg = 0;
        let mut best = 0.0f64;
        for (i, &x) in v.iter().enumerate() {
            if x.abs() > best {
                best = x.abs();
                arg = i;
            }
        }
        if v[arg] < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
        out.push(v);
    }
    Ok(out)
}

/// g23 samples over training, strictly increasing in step.
#[derive(Debug, Clone, Default)]
pub struct GapSeries {
    entries: Vec<(usize, f64)>,
}

impl GapSeries {
    pub fn new() -> GapSeries {
        GapSeries { entries: Vec::new() }
    }

    pub fn push(&mut self, step: usize, g23: f64) {
        if let Some(&(last, _)) = self.entries.last() {
            assert!(step > last, "gap series steps must increase");
        }
        self.entries.push((step, g23));
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn last_step(&self) -> Option<usize> {
        self.entries.last().map(|&(s, _)| s)
    }
}

/// Early window for the decline ratio: steps in [500, 1500].
pub const DECLINE_EARLY: (usize, usize) = (500, 1500);

/// Decline magnitude: mean g23 over the early window divided by mean g23
/// over the final 10% of the run. The same fixed windows are used whether or
/// not the run grokked.
pub fn decline_magnitude(series: &GapSeries) -> Result<f64, SpectralError> {
    let last = series.last_step().ok_or(SpectralError::EmptyWindow("empty series"))?;
    let late_from = last - last / 10;
    let mean_over = |lo: usize, hi: usize, what: &'static str| -> Result<f64, SpectralError> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for &(s, v) in series.entries() {
            if s >= lo && s <= hi {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            return Err(SpectralError::EmptyWindow(what));
        }
        Ok(sum / n as f64)
    };
    let early = mean_over(DECLINE_EARLY.0, DECLINE_EARLY.1, "early window")?;
    let late = mean_over(late_from, last, "late window")?;
    if late == 0.0 {
        return Ok(if early == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok(early / late)
}

/// Expanding-window displacement PCA: snapshots of `theta_t - theta_0`
/// (attention parameters), eigenvalues via the Gram trick.
#[derive(Debug, Clone)]
pub struct DisplacementTracker {
    base: Vec<f32>,
    steps: Vec<usize>,
    snapshots: Vec<Vec<f32>>,
}

impl DisplacementTracker {
    pub fn new(initial_attn: &AttnVector) -> DisplacementTracker {
        DisplacementTracker { base: initial_attn.data.clone(), steps: Vec::new(), snapshots: Vec::new() }
    }

    pub fn from_snapshots(base: Vec<f32>, steps: Vec<usize>, snapshots: Vec<Vec<f32>>) -> Self {
        DisplacementTracker { base, steps, snapshots }
    }

    pub fn record(&mut self, step: usize, current_attn: &AttnVector) {
        let diff: Vec<f32> =
            current_attn.data.iter().zip(&self.base).map(|(&c, &b)| c - b).collect();
        self.steps.push(step);
        self.snapshots.push(diff);
    }

    /// Append an already-computed displacement snapshot (resume path).
    pub fn push_raw(&mut self, step: usize, snapshot: Vec<f32>) {
        self.steps.push(step);
        self.snapshots.push(snapshot);
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn snapshots(&self) -> &[Vec<f32>] {
        &self.snapshots
    }

    /// Eigenvalues of the second-moment matrix of the first `n` snapshots,
    /// for every prefix n = 2..=len, paired with the prefix's last step.
    pub fn eigen_series(&self) -> Result<Vec<(usize, Vec<f64>)>, SpectralError> {
        let n = self.snapshots.len();
        if n < 2 {
            return Err(SpectralError::EmptyWindow("need at least 2 snapshots"));
        }
        // Full Gram once, then prefix sub-eigendecompositions.
        let mut gram = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let dot: f64 = self.snapshots[i]
                    .iter()
                    .zip(&self.snapshots[j])
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                gram.set(i, j, dot);
                gram.set(j, i, dot);
            }
        }
        let mut out = Vec::new();
        for k in 2..=n {
            let sub = Mat::from_fn(k, k, |i, j| gram.get(i, j) / k as f64);
            let spec = sym_eig(&sub)?;
            out.push((self.steps[k - 1], spec.values.iter().map(|&v| v.max(0.0)).collect()));
        }
        Ok(out)
    }
}

/// Top singular values of one attention weight matrix at one checkpoint.
#[derive(Debug, Clone)]
pub struct WsvdEntry {
    pub layer: usize,
    pub mat: AttnMat,
    /// Top singular values (at most 8).
    pub top: Vec<f64>,
    /// sigma_1 / sigma_2, capped at 1e6.
    pub ratio: f64,
    pub capped: bool,
}

/// Degeneracy cap for sigma1/sigma2 when sigma2 vanishes.
pub const WSVD_RATIO_CAP: f64 = 1e6;

/// Per-(layer, matrix) top-8 singular values and degeneracy ratio from a
/// model checkpoint.
pub fn weight_svd_track(data: &CheckpointData) -> Result<Vec<WsvdEntry>, SpectralError> {
    let d = data.d_model as usize;
    let mut out = Vec::new();
    for layer in 0..data.n_layers as usize {
        for (mat, suffix) in [
            (AttnMat::Q, "wq"),
            (AttnMat::K, "wk"),
            (AttnMat::V, "wv"),
            (AttnMat::O, "wo"),
        ] {
            let name = format!("layer{layer}.attn.{suffix}");
            let section = data
                .section(&name)
                .ok_or(SpectralError::EmptyWindow("missing attention section"))?;
            let m = Mat::from_fn(d, d, |i, j| section[i * d + j] as f64);
            let (_, s, _) = thin_svd(&m)?;
            let (ratio, capped) = if s[1] > s[0] / WSVD_RATIO_CAP {
                (s[0] / s[1], false)
            } else {
                (WSVD_RATIO_CAP, true)
            };
            out.push(WsvdEntry { layer, mat, top: s.iter().take(8).copied().collect(), ratio, capped });
        }
    }
    Ok(out)
}

/// Effective rank helper re-exported next to the spectra it describes.
pub use numcore::effective_rank;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttnLayout;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layout(d: usize) -> AttnLayout {
        AttnLayout { n_layers: 1, d_model: d, n_heads: 1 }
    }

    fn vector(layout: AttnLayout, data: Vec<f32>) -> AttnVector {
        assert_eq!(data.len(), layout.dim());
        AttnVector { layout, data }
    }

    fn fill_window(vectors: Vec<AttnVector>) -> UpdateWindow {
        let mut w = UpdateWindow::new(vectors.len());
        for (i, v) in vectors.into_iter().enumerate() {
            w.push(i + 1, &v);
        }
        w
    }

    #[test]
    fn identical_updates_rank_one_gram() {
        let l = layout(3); // dim 36
        let delta: Vec<f32> = (0..l.dim()).map(|i| (i as f32 * 0.37).sin()).collect();
        let w = 5;
        let window = fill_window(vec![vector(l, delta.clone()); w]);
        let spec = gram_spectrum(&window).unwrap();
        let norm2: f64 = delta.iter().map(|&v| v as f64 * v as f64).sum();
        assert!((spec.eigenvalues[0] - w as f64 * norm2).abs() < 1e-6 * norm2);
        for &v in &spec.eigenvalues[1..] {
            assert!(v < 1e-8 * spec.eigenvalues[0]);
        }
        assert_eq!(spec.edge_k, 1);

        let dirs = edge_directions(&window, 1).unwrap();
        let norm: f64 = norm2.sqrt();
        // v1 = +- delta / |delta| with the sign fixed by the convention.
        let mut arg = 0;
        let mut best = 0.0f32;
        for (i, &x) in delta.iter().enumerate() {
            if x.abs() > best {
                best = x.abs();
                arg = i;
            }
        }
        let sign = if delta[arg] < 0.0 { -1.0 } else { 1.0 };
        for (i, &x) in delta.iter().enumerate() {
            assert!((dirs[0][i] - sign * x as f64 / norm).abs() < 1e-6);
        }
        assert!(edge_directions(&window, 2).is_err(), "rank-1 window has one direction");
    }

    #[test]
    fn orthogonal_equal_norm_updates_flat_spectrum() {
        let l = layout(3);
        let dim = l.dim();
        let vs: Vec<AttnVector> = (0..4)
            .map(|i| {
                let mut d = vec![0.0f32; dim];
                d[i] = 2.0;
                vector(l, d)
            })
            .collect();
        let window = fill_window(vs);
        let spec = gram_spectrum(&window).unwrap();
        for &v in &spec.eigenvalues {
            assert!((v - 4.0).abs() < 1e-9);
        }
        for &g in &spec.gaps {
            assert!(g.abs() < 1e-9);
        }
        assert_eq!(spec.edge_k, 1, "flat spectrum defaults to k* = 1");
    }

    #[test]
    fn matches_dense_oracle_on_random_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let l = AttnLayout { n_layers: 1, d_model: 2, n_heads: 1 }; // dim 16
            let w = 5;
            let vs: Vec<AttnVector> = (0..w)
                .map(|_| vector(l, (0..l.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect();
            let window = fill_window(vs.clone());
            let spec = gram_spectrum(&window).unwrap();

            // Oracle: dense Gram in plain loops + sym_eig on a fresh matrix.
            let g = Mat::from_fn(w, w, |i, j| {
                vs[i].data.iter().zip(&vs[j].data).map(|(&a, &b)| a as f64 * b as f64).sum()
            });
            let oracle = sym_eig(&g).unwrap();
            for (a, b) in spec.eigenvalues.iter().zip(&oracle.values) {
                assert!((a - b).abs() <= 1e-8 * oracle.values[0].abs().max(1e-12));
            }

            // Directions match thin_svd right singular vectors up to sign.
            let k = spec
                .eigenvalues
                .iter()
                .filter(|&&v| v > 1e-9 * spec.eigenvalues[0])
                .count()
                .min(3);
            let dirs = edge_directions(&window, k).unwrap();
            let stack = Mat::from_fn(w, l.dim(), |i, j| vs[i].data[j] as f64);
            let (_, _, v) = thin_svd(&stack).unwrap();
            for (j, dir) in dirs.iter().enumerate() {
                let mut dot = 0.0;
                let mut norm = 0.0;
                for i in 0..l.dim() {
                    dot += dir[i] * v.get(i, j);
                    norm += dir[i] * dir[i];
                }
                assert!((norm - 1.0).abs() < 1e-6, "direction {j} not unit: {norm}");
                assert!((dot.abs() - 1.0).abs() < 1e-6, "direction {j} misaligned: {dot}");
            }
            // Orthonormality across directions.
            for a in 0..dirs.len() {
                for b in (a + 1)..dirs.len() {
                    let dot: f64 = dirs[a].iter().zip(&dirs[b]).map(|(x, y)| x * y).sum();
                    assert!(dot.abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn edge_position_examples() {
        let mut flat = vec![0.1; 20];
        let mut spectrum = vec![10.0, 9.0];
        spectrum.extend(vec![0.1; 18]);
        assert_eq!(edge_position(&spectrum).unwrap(), 2);
        let mut spectrum2 = vec![10.0];
        spectrum2.extend(vec![0.1; 19]);
        assert_eq!(edge_position(&spectrum2).unwrap(), 1);
        flat[0] = 0.1;
        assert_eq!(edge_position(&flat).unwrap(), 1);
        assert!(edge_position(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn scale_and_permutation_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let l = AttnLayout { n_layers: 1, d_model: 3, n_heads: 1 };
        let vs: Vec<AttnVector> = (0..6)
            .map(|_| vector(l, (0..l.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let window = fill_window(vs.clone());
        let base = gram_spectrum(&window).unwrap();

        let c = 3.0f32;
        let scaled: Vec<AttnVector> = vs
            .iter()
            .map(|v| vector(l, v.data.iter().map(|&x| x * c).collect()))
            .collect();
        let sw = fill_window(scaled);
        let sspec = gram_spectrum(&sw).unwrap();
        for (a, b) in base.eigenvalues.iter().zip(&sspec.eigenvalues) {
            assert!((b - a * (c as f64) * (c as f64)).abs() < 1e-6 * b.max(1e-9));
        }
        assert_eq!(base.edge_k, sspec.edge_k);

        let mut perm = vs.clone();
        perm.reverse();
        let pw = fill_window(perm);
        let pspec = gram_spectrum(&pw).unwrap();
        for (a, b) in base.eigenvalues.iter().zip(&pspec.eigenvalues) {
            assert!((a - b).abs() < 1e-8 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn decline_ratio_synthetic() {
        let mut series = GapSeries::new();
        for step in (100..=10_000).step_by(100) {
            let v = if step <= 1500 { 40.0 } else { 1.0 };
            series.push(step, v);
        }
        let r = decline_magnitude(&series).unwrap();
        assert!((r - 40.0).abs() < 1e-12);

        let mut flat = GapSeries::new();
        for step in (100..=10_000).step_by(100) {
            flat.push(step, 2.5);
        }
        assert!((decline_magnitude(&flat).unwrap() - 1.0).abs() < 1e-12);

        let mut short = GapSeries::new();
        short.push(100, 1.0);
        assert!(decline_magnitude(&short).is_err());
    }

    #[test]
    fn displacement_pca_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let l = AttnLayout { n_layers: 1, d_model: 2, n_heads: 1 };
        let base = AttnVector::zeros(l);
        let mut tracker = DisplacementTracker::new(&base);
        let snaps: Vec<Vec<f32>> =
            (0..5).map(|_| (0..l.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        for (i, s) in snaps.iter().enumerate() {
            tracker.record((i + 1) * 500, &AttnVector { layout: l, data: s.clone() });
        }
        let series = tracker.eigen_series().unwrap();
        assert_eq!(series.len(), 4); // prefixes of length 2..=5
        // Oracle at the full prefix: dense second-moment matrix in dim space.
        let dim = l.dim();
        let n = snaps.len();
        let dense = Mat::from_fn(dim, dim, |a, b| {
            snaps.iter().map(|s| s[a] as f64 * s[b] as f64).sum::<f64>() / n as f64
        });
        let oracle = sym_eig(&dense).unwrap();
        let got = &series.last().unwrap().1;
        for (i, &v) in got.iter().enumerate() {
            assert!((v - oracle.values[i]).abs() < 1e-8 * oracle.values[0].max(1e-12));
        }

        // Collinear snapshots: a single positive eigenvalue.
        let mut t2 = DisplacementTracker::new(&base);
        for i in 1..=3 {
            let data: Vec<f32> = (0..dim).map(|j| (i as f32) * (j as f32 + 1.0)).collect();
            t2.record(i * 500, &AttnVector { layout: l, data });
        }
        let s2 = t2.eigen_series().unwrap();
        let last = &s2.last().unwrap().1;
        assert!(last[0] > 0.0);
        assert!(last[1] < 1e-8 * last[0]);
    }

    #[test]
    fn wsvd_identity_and_rank_one() {
        use crate::model::{Model, ModelConfig};
        let cfg = ModelConfig::toy(5);
        let mut model: Model<f32> = Model::build(&cfg, 1).unwrap();
        let d = cfg.d_model;
        // Overwrite layer0 wq with identity and layer0 wk with rank-1.
        {
            let store = model.params_mut();
            for (name, buf) in store.iter_mut() {
                if name == "layer0.attn.wq" {
                    buf.fill(0.0);
                    for i in 0..d {
                        buf[i * d + i] = 1.0;
                    }
                } else if name == "layer0.attn.wk" {
                    for i in 0..d {
                        for j in 0..d {
                            buf[i * d + j] = (i + 1) as f32 * 0.1 * (j + 1) as f32;
                        }
                    }
                }
            }
        }
        let data = model.to_checkpoint(0);
        let entries = weight_svd_track(&data).unwrap();
        let wq = entries.iter().find(|e| e.layer == 0 && e.mat == AttnMat::Q).unwrap();
        assert!((wq.ratio - 1.0).abs() < 1e-9);
        assert!(!wq.capped);
        let wk = entries.iter().find(|e| e.layer == 0 && e.mat == AttnMat::K).unwrap();
        assert_eq!(wk.ratio, WSVD_RATIO_CAP);
        assert!(wk.capped);
    }
}
