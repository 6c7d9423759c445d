//! Kernel scales and model depth from the frequency content of a signal.
//!
//! A tone of frequency `f` is matched by a Gaussian with `3σ` equal to half
//! its period, so `σ = 1/(6f)` and `γ = 1/σ² = 36 f²`. The scales between
//! the lowest and highest detected frequency are covered by a geometric
//! ladder with ratio `ρ`.

use serde::{Deserialize, Serialize};

use crate::dmd;
use crate::error::{invalid, Result};
use crate::numerics;

pub const DEFAULT_KEEP_FRACTION: f64 = 0.1;
pub const DEFAULT_RHO: f64 = 2.0;
/// Eigenvalue moduli accepted as oscillations by the DMD detector.
pub const DMD_MODULUS_RANGE: (f64, f64) = (0.9, 1.1);
/// Relative tolerance for merging nearby DMD frequencies.
pub const DMD_DEDUP: f64 = 0.01;
const MIN_SAMPLES: usize = 8;
const SPACING_TOL: f64 = 1e-9;

/// Uniform samples `ys[i] = y(xs[i])` on the periodic window `[a, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSignal {
    xs: Vec<f64>,
    ys: Vec<f64>,
    domain: (f64, f64),
}

impl SampledSignal {
    /// The domain is `[xs[0], xs[last] + Δx]`, one full sampling period.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return invalid(format!("{} abscissae for {} values", xs.len(), ys.len()));
        }
        if xs.len() < MIN_SAMPLES {
            return invalid(format!("signal needs at least {MIN_SAMPLES} samples, got {}", xs.len()));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return invalid("signal contains non-finite values");
        }
        let n = xs.len();
        let dx = (xs[n - 1] - xs[0]) / (n - 1) as f64;
        if !(dx > 0.0) {
            return invalid("abscissae must be strictly increasing");
        }
        for (i, w) in xs.windows(2).enumerate() {
            if ((w[1] - w[0]) - dx).abs() > SPACING_TOL * dx.max(xs[0].abs().max(xs[n - 1].abs())) {
                return invalid(format!("non-uniform spacing at sample {i}"));
            }
        }
        Ok(Self { domain: (xs[0], xs[n - 1] + dx), xs, ys })
    }

    /// `n` samples of `f` at `a + i(b − a)/n`.
    pub fn from_fn(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if !(b > a) || n < MIN_SAMPLES {
            return invalid(format!("need b > a and at least {MIN_SAMPLES} samples"));
        }
        let xs: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
        let ys = xs.iter().map(|&x| f(x)).collect();
        let mut s = Self::new(xs, ys)?;
        s.domain = (a, b);
        Ok(s)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.domain.1 - self.domain.0) / self.len() as f64
    }

    pub fn range(&self) -> f64 {
        let (lo, hi) = self.ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        hi - lo
    }

    /// A copy with different values on the same grid.
    pub fn with_values(&self, ys: Vec<f64>) -> Result<Self> {
        if ys.len() != self.len() {
            return invalid("value count does not match the grid");
        }
        Ok(Self { xs: self.xs.clone(), ys, domain: self.domain })
    }
}

/// Frequencies (Hz, ascending) whose mean-removed DFT magnitude is at least
/// `keep_fraction` of the largest one. Bin `k` maps to `k / (b − a)`.
pub fn detect_frequencies_fft(signal: &SampledSignal, keep_fraction: f64) -> Result<Vec<f64>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return invalid(format!("keep fraction {keep_fraction} outside (0, 1]"));
    }
    let mean = signal.ys.iter().sum::<f64>() / signal.len() as f64;
    let centered: Vec<f64> = signal.ys.iter().map(|y| y - mean).collect();
    let spectrum = numerics::dft_real(&centered)?;
    let half = signal.len() / 2;
    let mags: Vec<f64> = spectrum[1..=half].iter().map(|z| z.norm()).collect();
    let max = mags.iter().copied().fold(0.0, f64::max);
    // Round-off leaves constant signals with magnitudes near 1e-13·N.
    let scale = signal.ys.iter().map(|y| y.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if max <= 1e-12 * scale * signal.len() as f64 {
        return Ok(Vec::new());
    }
    let period = signal.domain.1 - signal.domain.0;
    Ok(mags
        .iter()
        .enumerate()
        .filter(|&(_, &m)| m >= keep_fraction * max)
        .map(|(i, _)| (i + 1) as f64 / period)
        .collect())
}

/// Oscillation frequencies from the DMD of the delay-embedded signal:
/// `f = |arg λ| / (2π Δx)` for eigenvalues with modulus in [0.9, 1.1].
/// Frequencies below half the window's fundamental are treated as trend.
pub fn detect_frequencies_dmd(signal: &SampledSignal, delay: usize) -> Result<Vec<f64>> {
    if delay < 2 {
        return invalid(format!("delay {delay} must be at least 2"));
    }
    let snaps = dmd::delay_embed(&signal.ys, delay)?;
    let result = dmd::dmd_rrr(&snaps, dmd::DEFAULT_RANK_TOLERANCE)?;
    let dx = signal.spacing();
    let floor = 0.5 / (signal.domain.1 - signal.domain.0);
    let mut freqs: Vec<f64> = result
        .eigenvalues
        .iter()
        .filter(|z| (DMD_MODULUS_RANGE.0..=DMD_MODULUS_RANGE.1).contains(&z.norm()))
        .map(|z| z.arg().abs() / (2.0 * std::f64::consts::PI * dx))
        .filter(|&f| f >= floor)
        .collect();
    freqs.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(freqs.len());
    for f in freqs {
        match out.last() {
            Some(&last) if (f - last).abs() <= DMD_DEDUP * last => {}
            _ => out.push(f),
        }
    }
    Ok(out)
}

/// `γ = 36 f²`, the inverse variance of a Gaussian with `σ = 1/(6f)`.
pub fn freq_to_gamma(f: f64) -> Result<f64> {
    if !(f > 0.0) || !f.is_finite() {
        return invalid(format!("frequency {f} must be positive"));
    }
    Ok(36.0 * f * f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleLadder {
    pub gamma0: f64,
    pub gamma_max: f64,
    pub rho: f64,
    pub scales: Vec<f64>,
    pub layer_count: usize,
}

/// Smallest `ℓ` with `ρ^ℓ γ0 ≥ γmax`, at least one.
pub fn layer_count(gamma0: f64, gamma_max: f64, rho: f64) -> usize {
    let mut l = 0usize;
    let mut g = gamma0;
    while g < gamma_max * (1.0 - 1e-12) {
        g *= rho;
        l += 1;
    }
    l.max(1)
}

/// Ladder spanning the detected frequencies. With fewer than two
/// frequencies the model has a single layer; with none, `γ = 1`.
pub fn build_ladder(frequencies: &[f64], rho: f64) -> Result<ScaleLadder> {
    if !(rho > 1.0) || !rho.is_finite() {
        return invalid(format!("decay rate {rho} must exceed 1"));
    }
    let lo = frequencies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = frequencies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (gamma0, gamma_max) = if frequencies.is_empty() { (1.0, 1.0) } else { (freq_to_gamma(lo)?, freq_to_gamma(hi)?) };
    let layers = layer_count(gamma0, gamma_max, rho);
    let scales = (0..layers).map(|j| gamma0 * rho.powi(j as i32)).collect();
    Ok(ScaleLadder { gamma0, gamma_max, rho, scales, layer_count: layers })
}
