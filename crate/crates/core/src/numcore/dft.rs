//! Power spectrum of a real cyclic signal. The DC bin is always excluded:
//! group-averaged perturbation fields carry a large mean which would otherwise
//! dominate every spectrum. Conjugate pairs are folded, so the retained bins
//! are w = 1..=(M-1)/2 plus the Nyquist bin when M is even.

use super::NumError;

#[derive(Debug, Clone)]
pub struct PowerSpectrum {
    /// Signal length.
    pub m: usize,
    /// `power[i]` is the power at frequency `w = i + 1`.
    pub power: Vec<f64>,
}

/// Naive O(M^2) DFT power. M never exceeds 97 here.
pub fn dft_power(signal: &[f64]) -> Result<PowerSpectrum, NumError> {
    let m = signal.len();
    if m < 3 {
        return Err(NumError::Degenerate("signal shorter than 3"));
    }
    let n_bins = m / 2; // (m-1)/2 for odd m, includes Nyquist for even m
    let mut power = Vec::with_capacity(n_bins);
    for w in 1..=n_bins {
        let mut re = 0.0;
        let mut im = 0.0;
        for (q, &x) in signal.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * (w * q) as f64 / m as f64;
            re += x * phase.cos();
            im += x * phase.sin();
        }
        power.push(re * re + im * im);
    }
    Ok(PowerSpectrum { m, power })
}

impl PowerSpectrum {
    pub fn total(&self) -> f64 {
        self.power.iter().sum()
    }

    /// Peak frequency and its power; ties break toward the smaller frequency.
    pub fn peak(&self) -> (usize, f64) {
        let mut best = (1, self.power[0]);
        for (i, &p) in self.power.iter().enumerate() {
            if p > best.1 {
                best = (i + 1, p);
            }
        }
        best
    }

    /// Frequencies of the k largest bins, by descending power.
    pub fn top_frequencies(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.power.len()).collect();
        idx.sort_by(|&a, &b| {
            self.power[b].partial_cmp(&self.power[a]).unwrap().then(a.cmp(&b))
        });
        idx.into_iter().take(k).map(|i| i + 1).collect()
    }

    /// Fraction of retained power at frequency `w` (1-indexed).
    pub fn fraction_at(&self, w: usize) -> f64 {
        let total = self.total();
        if total > 0.0 && w >= 1 && w <= self.power.len() {
            self.power[w - 1] / total
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pure_tone_single_bin() {
        let m = 97;
        let signal: Vec<f64> = (0..m)
            .map(|q| (2.0 * std::f64::consts::PI * 3.0 * q as f64 / m as f64).cos())
            .collect();
        let spec = dft_power(&signal).unwrap();
        let (peak, p) = spec.peak();
        assert_eq!(peak, 3);
        assert!(p / spec.total() > 1.0 - 1e-10);
    }

    #[test]
    fn constant_signal_no_retained_power() {
        let spec = dft_power(&vec![5.5; 31]).unwrap();
        // All mass is DC, which is excluded; bins only hold rounding residue.
        assert!(spec.total() < 1e-20);
    }

    #[test]
    fn matches_naive_oracle() {
        // Independent summation with explicitly accumulated complex parts.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 96;
        let signal: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = dft_power(&signal).unwrap();
        assert_eq!(spec.power.len(), 48); // 47 pairs + Nyquist
        for w in 1..=48 {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for q in 0..m {
                let ang = 2.0 * std::f64::consts::PI * (w * q % m) as f64 / m as f64;
                re += signal[q] * ang.cos();
                im -= signal[q] * ang.sin();
            }
            let want = re * re + im * im;
            let got = spec.power[w - 1];
            assert!((got - want).abs() <= 1e-10 * want.max(1.0));
        }
    }

    #[test]
    fn cyclic_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = 53;
        let signal: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut shifted = signal.clone();
        shifted.rotate_left(17);
        let a = dft_power(&signal).unwrap();
        let b = dft_power(&shifted).unwrap();
        for (x, y) in a.power.iter().zip(&b.power) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval_on_retained_bins_odd_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = 97;
        let signal: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mean = signal.iter().sum::<f64>() / m as f64;
        let ss: f64 = signal.iter().map(|x| (x - mean) * (x - mean)).sum();
        let spec = dft_power(&signal).unwrap();
        let want = m as f64 / 2.0 * ss;
        assert!((spec.total() - want).abs() < 1e-8 * want);
    }
}
