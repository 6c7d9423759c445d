//! Negative-Sobolev spectral losses and the multiscale signal
//! reconstruction experiment.
//!
//! Spectra use the torus convention `F̂(k) = (1/N) Σ_n f[n] e^{−2πikn/N}`,
//! so the `k = 0` term is the squared mean discrepancy and the sum over all
//! bins with unit weights equals the mean squared error.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::split_75_25;
use crate::error::{invalid, Error, Result};
use crate::hsvr::{metrics, Metrics};
use crate::nn::{dense_backward, dense_forward, DEFAULT_LEARNING_RATE};
use crate::numerics::{self, Complex};
use crate::scales::SampledSignal;

/// The Sobolev index `s` of the loss norm; fixed.
pub const SOBOLEV_INDEX: f64 = -0.5;
pub const DEFAULT_HIDDEN_LAYERS: usize = 9;
pub const DEFAULT_WIDTH: usize = 20;
pub const DEFAULT_GRID: usize = 512;
pub const DEFAULT_EVAL_GRID: usize = 1024;
pub const DEFAULT_EPOCHS: usize = 2000;

/// `1 / (1 + (2π|k|)²)^{1/2}`.
pub fn sobolev_weight(k: i64) -> f64 {
    let w = 2.0 * PI * k.unsigned_abs() as f64;
    1.0 / (1.0 + w * w).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleFn {
    Linear,
    Exponential,
}

impl ScaleFn {
    pub fn scale(self, layer: usize) -> usize {
        match self {
            ScaleFn::Linear => layer,
            ScaleFn::Exponential => 1usize << layer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L2,
    Sobolev1,
    Sobolev2,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Self::L2),
            "sobolev1" => Ok(Self::Sobolev1),
            "sobolev2" => Ok(Self::Sobolev2),
            other => invalid(format!("unknown loss {other:?}")),
        }
    }
}

/// Unnormalized bins `k` with `|k| = s` on an `n`-point grid.
fn bins(s: usize, n: usize) -> Result<Vec<usize>> {
    if 2 * s >= n {
        return invalid(format!("scale {s} has no bin below the Nyquist index of a {n}-point grid"));
    }
    Ok(if s == 0 { vec![0] } else { vec![s, n - s] })
}

/// Weighted spectral residual on the bins `|k| = s` and its gradient with
/// respect to `output`.
fn band_loss(target: &[f64], output: &[f64], s: usize) -> Result<(f64, Vec<f64>)> {
    let n = target.len();
    if output.len() != n || n == 0 {
        return invalid(format!("output has {} samples, target {}", output.len(), n));
    }
    let w = sobolev_weight(s as i64);
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for k in bins(s, n)? {
        let step = -2.0 * PI * k as f64 / n as f64;
        let coef: Complex = (0..n)
            .map(|j| Complex::from_polar(output[j] - target[j], step * j as f64))
            .sum::<Complex>()
            / n as f64;
        loss += w * coef.norm_sqr();
        // ∂|R̂|²/∂r_j = (2/N) Re(conj(R̂) e^{−2πikj/N})
        for (j, g) in grad.iter_mut().enumerate() {
            *g += w * 2.0 / n as f64 * (coef.conj() * Complex::from_polar(1.0, step * j as f64)).re;
        }
    }
    Ok((loss, grad))
}

/// Per-layer loss: layer `ℓ`'s auxiliary output against the target on the
/// bins `|k| = s(ℓ)`. Returns `(loss, gradient)` for each layer.
pub fn spectral_loss1(target: &[f64], aux: &[Vec<f64>], scale_fn: ScaleFn) -> Result<Vec<(f64, Vec<f64>)>> {
    aux.iter().enumerate().map(|(l, f)| band_loss(target, f, scale_fn.scale(l))).collect()
}

/// All bins `|k| = s(ℓ)`, `ℓ < layers`, applied to the final output.
pub fn spectral_loss2(target: &[f64], output: &[f64], scale_fn: ScaleFn, layers: usize) -> Result<(f64, Vec<f64>)> {
    if layers == 0 {
        return invalid("need at least one layer");
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; output.len()];
    for l in 0..layers {
        let (v, g) = band_loss(target, output, scale_fn.scale(l))?;
        loss += v;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

/// Clean and noisy samples on a uniform grid plus a 75/25 split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisySignal {
    pub clean: SampledSignal,
    pub noisy: Vec<f64>,
    pub noise_level: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Adds `ε · range(h) · N(0, 1)` independently at each grid point.
pub fn make_noisy(clean: &SampledSignal, noise_level: f64, seed: u64) -> Result<NoisySignal> {
    if !(noise_level >= 0.0) {
        return invalid(format!("noise level {noise_level} must be non-negative"));
    }
    let std = noise_level * clean.range();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = clean
        .ys()
        .iter()
        .map(|&y| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if noise_level == 0.0 { y } else { y + std * z }
        })
        .collect();
    let (train, test) = split_75_25(clean.len(), seed.wrapping_add(0x5eed))?;
    Ok(NoisySignal { clean: clean.clone(), noisy, noise_level, train, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevConfig {
    pub scale_fn: ScaleFn,
    pub hidden_layers: usize,
    pub width: usize,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub eval_points: usize,
}

impl Default for SobolevConfig {
    fn default() -> Self {
        Self {
            scale_fn: ScaleFn::Linear,
            hidden_layers: DEFAULT_HIDDEN_LAYERS,
            width: DEFAULT_WIDTH,
            loss: LossKind::L2,
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            eval_points: DEFAULT_EVAL_GRID,
        }
    }
}

/// Scalar-input ReLU backbone with one linear output head per hidden layer;
/// the last head is the network output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadedNet {
    pub hidden_layers: usize,
    pub width: usize,
    pub params: Vec<f64>,
}

struct HeadedCache {
    /// `acts[0]` is the input, `acts[ℓ + 1]` the ReLU output of layer `ℓ`.
    acts: Vec<Vec<f64>>,
    heads: Vec<Vec<f64>>,
}

impl HeadedNet {
    /// He-initialized weights, zero biases.
    pub fn new(hidden_layers: usize, width: usize, seed: u64) -> Result<Self> {
        if hidden_layers == 0 || width == 0 {
            return invalid("need at least one hidden layer of positive width");
        }
        let mut net = Self { hidden_layers, width, params: Vec::new() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; net.param_count()];
        for l in 0..hidden_layers {
            let (w, _) = net.layer_range(l);
            let std = (2.0 / net.fan_in(l) as f64).sqrt();
            for p in &mut params[w] {
                *p = std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            }
            let (c, _) = net.head_range(l);
            let std = (2.0 / width as f64).sqrt();
            for p in &mut params[c] {
                *p = std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            }
        }
        net.params = params;
        Ok(net)
    }

    fn fan_in(&self, l: usize) -> usize {
        if l == 0 { 1 } else { self.width }
    }

    fn layer_offset(&self, l: usize) -> usize {
        let first = self.width + self.width;
        let rest = self.width * self.width + self.width;
        let head = self.width + 1;
        if l == 0 { 0 } else { first + head + (l - 1) * (rest + head) }
    }

    fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let o = self.layer_offset(l);
        let nw = self.width * self.fan_in(l);
        (o..o + nw, o + nw..o + nw + self.width)
    }

    fn head_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (_, b) = self.layer_range(l);
        (b.end..b.end + self.width, b.end + self.width..b.end + self.width + 1)
    }

    pub fn param_count(&self) -> usize {
        self.layer_offset(self.hidden_layers)
    }

    fn forward_cache(&self, xs: &[f64]) -> HeadedCache {
        let n = xs.len();
        let mut acts = vec![xs.to_vec()];
        let mut heads = Vec::with_capacity(self.hidden_layers);
        for l in 0..self.hidden_layers {
            let (w, b) = self.layer_range(l);
            let mut z = dense_forward(acts.last().unwrap(), n, self.fan_in(l), self.width, &self.params[w], &self.params[b]);
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            let (c, cb) = self.head_range(l);
            heads.push(dense_forward(&z, n, self.width, 1, &self.params[c], &self.params[cb]));
            acts.push(z);
        }
        HeadedCache { acts, heads }
    }

    /// Outputs of every head at `xs`.
    pub fn heads(&self, xs: &[f64]) -> Vec<Vec<f64>> {
        self.forward_cache(xs).heads
    }

    pub fn predict(&self, xs: &[f64]) -> Vec<f64> {
        self.forward_cache(xs).heads.pop().unwrap()
    }

    /// Parameter gradient given `∂loss/∂head_ℓ` for each head (`None` = unused).
    fn backward(&self, cache: &HeadedCache, head_grads: &[Option<Vec<f64>>]) -> Vec<f64> {
        let n = cache.acts[0].len();
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = vec![0.0; n * self.width];
        for l in (0..self.hidden_layers).rev() {
            let z = &cache.acts[l + 1];
            if let Some(g) = &head_grads[l] {
                let (c, cb) = self.head_range(l);
                let (gc, gcb) = split_two(&mut grad, c.clone(), cb);
                let dz = dense_backward(z, g, n, self.width, 1, &self.params[c], gc, gcb, true);
                delta.iter_mut().zip(dz).for_each(|(a, b)| *a += b);
            }
            for (d, &v) in delta.iter_mut().zip(z) {
                if v <= 0.0 {
                    *d = 0.0;
                }
            }
            let (w, b) = self.layer_range(l);
            let (gw, gb) = split_two(&mut grad, w.clone(), b);
            delta = dense_backward(&cache.acts[l], &delta, n, self.fan_in(l), self.width, &self.params[w], gw, gb, l > 0);
        }
        grad
    }
}

fn split_two(v: &mut [f64], a: std::ops::Range<usize>, b: std::ops::Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(a.end, b.start);
    let (x, y) = v[a.start..b.end].split_at_mut(a.len());
    (x, y)
}

/// Training inputs for the spectral losses: each grid point takes the
/// abscissa and noisy value of its nearest training sample.
fn nearest_assignment(signal: &NoisySignal) -> (Vec<f64>, Vec<f64>) {
    let xs = signal.clean.xs();
    let mut x_on_grid = Vec::with_capacity(xs.len());
    let mut y_on_grid = Vec::with_capacity(xs.len());
    for &x in xs {
        let &j = signal
            .train
            .iter()
            .min_by(|&&a, &&b| (xs[a] - x).abs().total_cmp(&(xs[b] - x).abs()))
            .expect("train split is nonempty");
        x_on_grid.push(xs[j]);
        y_on_grid.push(signal.noisy[j]);
    }
    (x_on_grid, y_on_grid)
}

/// Loss and parameter gradient of one full-batch step.
fn objective(net: &HeadedNet, config: &SobolevConfig, signal: &NoisySignal, grid_inputs: &(Vec<f64>, Vec<f64>)) -> Result<(f64, Vec<f64>)> {
    let last = net.hidden_layers - 1;
    let mut head_grads: Vec<Option<Vec<f64>>> = vec![None; net.hidden_layers];
    let (loss, cache) = match config.loss {
        LossKind::L2 => {
            let xs: Vec<f64> = signal.train.iter().map(|&i| signal.clean.xs()[i]).collect();
            let ys: Vec<f64> = signal.train.iter().map(|&i| signal.noisy[i]).collect();
            let cache = net.forward_cache(&xs);
            let n = xs.len() as f64;
            let out = &cache.heads[last];
            let loss = out.iter().zip(&ys).map(|(o, y)| (o - y).powi(2)).sum::<f64>() / n;
            head_grads[last] = Some(out.iter().zip(&ys).map(|(o, y)| 2.0 * (o - y) / n).collect());
            (loss, cache)
        }
        LossKind::Sobolev1 => {
            let cache = net.forward_cache(&grid_inputs.0);
            let parts = spectral_loss1(&grid_inputs.1, &cache.heads, config.scale_fn)?;
            let mut loss = 0.0;
            for (l, (v, g)) in parts.into_iter().enumerate() {
                loss += v;
                head_grads[l] = Some(g);
            }
            (loss, cache)
        }
        LossKind::Sobolev2 => {
            let cache = net.forward_cache(&grid_inputs.0);
            let (loss, g) = spectral_loss2(&grid_inputs.1, &cache.heads[last], config.scale_fn, net.hidden_layers)?;
            head_grads[last] = Some(g);
            (loss, cache)
        }
    };
    Ok((loss, net.backward(&cache, &head_grads)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetrics {
    /// Against the clean function on the dense evaluation grid.
    pub mse_vs_clean: f64,
    /// Against the noisy values at the held-out test points.
    pub mse_vs_noisy: f64,
    /// Variance of the reconstruction on the dense grid.
    pub output_variance: f64,
    pub clean_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedReconstruction {
    pub net: HeadedNet,
    pub config: SobolevConfig,
    pub eval_xs: Vec<f64>,
    pub eval_clean: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub losses: Vec<f64>,
    pub metrics: ReconstructionMetrics,
}

/// Band-limited sum `Σ_ℓ P_{s(ℓ)} f_ℓ` of the head outputs on a periodic grid.
pub fn band_sum(heads: &[Vec<f64>], scale_fn: ScaleFn) -> Result<Vec<f64>> {
    let n = heads.first().map_or(0, Vec::len);
    let mut acc = vec![Complex::new(0.0, 0.0); n];
    for (l, f) in heads.iter().enumerate() {
        let spec = numerics::dft_real(f)?;
        for k in bins(scale_fn.scale(l), n)? {
            acc[k] += spec[k];
        }
    }
    Ok(numerics::idft(&acc)?.into_iter().map(|z| z.re).collect())
}

/// Trains the headed network with `config.loss` by full-batch gradient
/// descent and reconstructs on a dense periodic grid over the same domain.
///
/// The reconstruction is the network output for `l2` and `sobolev2`. For
/// `sobolev1`, where each head is constrained only on its own band, it is
/// the band-limited sum of the heads.
pub fn train_reconstruction(
    signal: &NoisySignal,
    config: &SobolevConfig,
    seed: u64,
    clean: &dyn Fn(f64) -> f64,
) -> Result<TrainedReconstruction> {
    if config.hidden_layers == 0 || config.width == 0 || config.epochs == 0 {
        return invalid("need hidden layers, width and epochs all positive");
    }
    if !(config.learning_rate > 0.0) {
        return invalid("learning rate must be positive");
    }
    if signal.train.is_empty() {
        return invalid("training split is empty");
    }
    for l in 0..config.hidden_layers {
        bins(config.scale_fn.scale(l), signal.clean.len())?;
    }
    let mut net = HeadedNet::new(config.hidden_layers, config.width, seed)?;
    let grid_inputs = nearest_assignment(signal);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grad) = objective(&net, config, signal, &grid_inputs)?;
        if !loss.is_finite() {
            return Err(Error::NumericalFailure(format!("loss became {loss} at epoch {epoch}")));
        }
        losses.push(loss);
        net.params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= config.learning_rate * g);
    }

    let (a, b) = signal.clean.domain();
    let m = config.eval_points;
    let eval_xs: Vec<f64> = (0..m).map(|i| a + (b - a) * i as f64 / m as f64).collect();
    let eval_clean: Vec<f64> = eval_xs.iter().map(|&x| clean(x)).collect();
    let reconstruction = match config.loss {
        LossKind::Sobolev1 => band_sum(&net.heads(&eval_xs), config.scale_fn)?,
        _ => net.predict(&eval_xs),
    };
    let test_xs: Vec<f64> = signal.test.iter().map(|&i| signal.clean.xs()[i]).collect();
    let test_pred = match config.loss {
        LossKind::Sobolev1 => {
            // Evaluate the band sum at the test points by nearest dense-grid lookup.
            test_xs.iter().map(|&x| reconstruction[(((x - a) / (b - a) * m as f64).round() as usize) % m]).collect()
        }
        _ => net.predict(&test_xs),
    };
    let test_noisy: Vec<f64> = signal.test.iter().map(|&i| signal.noisy[i]).collect();
    let variance = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
    };
    let mse = |m: Metrics| m.rmse * m.rmse;
    let metrics_out = ReconstructionMetrics {
        mse_vs_clean: mse(metrics(&reconstruction, &eval_clean)),
        mse_vs_noisy: mse(metrics(&test_pred, &test_noisy)),
        output_variance: variance(&reconstruction),
        clean_variance: variance(&eval_clean),
    };
    Ok(TrainedReconstruction { net, config: *config, eval_xs, eval_clean, reconstruction, losses, metrics: metrics_out })
}
