//! ε-insensitive support vector regression with Gaussian kernels and the
//! hierarchical (coarse-to-fine) residual cascade built on it.
//!
//! The dual is solved by SMO on the standard `2n`-variable form with
//! second-order working-pair selection.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scales::{SampledSignal, ScaleLadder};

pub const MAX_ITERATIONS: usize = 100_000;
/// Default `C` as a multiple of the target range.
pub const DEFAULT_C_FACTOR: f64 = 100.0;
/// Default `ε` as a fraction of the target range.
pub const DEFAULT_EPSILON_FACTOR: f64 = 0.01;
/// Default KKT tolerance as a fraction of the target range.
pub const DEFAULT_KKT_FACTOR: f64 = 1e-3;
const TAU: f64 = 1e-12;

pub fn gaussian(gamma: f64, x: f64, c: f64) -> f64 {
    (-gamma * (x - c) * (x - c)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrParams {
    pub gamma: f64,
    pub epsilon: f64,
    pub c: f64,
    /// Stopping tolerance on the maximal KKT violation, in target units.
    pub kkt_tol: f64,
    pub max_iterations: usize,
}

impl SvrParams {
    /// Range-scaled defaults for fitting `ys` at scale `gamma`.
    pub fn defaults_for(ys: &[f64], gamma: f64) -> Self {
        let r = range(ys).max(f64::MIN_POSITIVE);
        Self {
            gamma,
            epsilon: DEFAULT_EPSILON_FACTOR * r,
            c: DEFAULT_C_FACTOR * r,
            kkt_tol: DEFAULT_KKT_FACTOR * r,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

fn range(ys: &[f64]) -> f64 {
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if lo.is_finite() { hi - lo } else { 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub support_xs: Vec<f64>,
    /// `α − α*` for each support vector.
    pub dual_coefs: Vec<f64>,
    /// Positions of the support vectors in the training set.
    pub support_index: Vec<usize>,
    pub bias: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub c: f64,
    pub iterations: usize,
}

impl SvrModel {
    pub fn predict(&self, x: f64) -> f64 {
        self.bias + self.support_xs.iter().zip(&self.dual_coefs).map(|(&s, &a)| a * gaussian(self.gamma, x, s)).sum::<f64>()
    }

    pub fn predict_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.predict(x)).collect()
    }

    /// Full dual vector over a training set of size `n`.
    pub fn dual_vector(&self, n: usize) -> Vec<f64> {
        let mut beta = vec![0.0; n];
        for (&i, &b) in self.support_index.iter().zip(&self.dual_coefs) {
            beta[i] = b;
        }
        beta
    }
}

pub fn predict(model: &SvrModel, x: f64) -> f64 {
    model.predict(x)
}

/// `½ βᵀKβ + ε Σ|β| − yᵀβ` for the dual vector `beta`.
pub fn dual_objective(xs: &[f64], ys: &[f64], beta: &[f64], gamma: f64, epsilon: f64) -> f64 {
    let mut quad = 0.0;
    for i in 0..xs.len() {
        for j in 0..xs.len() {
            quad += beta[i] * beta[j] * gaussian(gamma, xs[i], xs[j]);
        }
    }
    0.5 * quad + epsilon * beta.iter().map(|b| b.abs()).sum::<f64>() - ys.iter().zip(beta).map(|(y, b)| y * b).sum::<f64>()
}

/// Largest violation of the optimality conditions on the training set,
/// in target units. Returns `Err` if a dual coefficient leaves `[−C, C]`.
pub fn kkt_violation(model: &SvrModel, xs: &[f64], ys: &[f64]) -> Result<f64> {
    let beta = model.dual_vector(xs.len());
    let bound_tol = 1e-9 * model.c;
    let mut worst: f64 = 0.0;
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let b = beta[i];
        if b.abs() > model.c + bound_tol {
            return Err(Error::NumericalFailure(format!("dual coefficient {b} exceeds C = {}", model.c)));
        }
        let r = y - model.predict(x);
        let eps = model.epsilon;
        let v = if b.abs() <= bound_tol {
            (r.abs() - eps).max(0.0)
        } else if b >= model.c - bound_tol {
            (eps - r).max(0.0)
        } else if b <= -model.c + bound_tol {
            (r + eps).max(0.0)
        } else if b > 0.0 {
            (r - eps).abs()
        } else {
            (r + eps).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// ε-SVR with kernel `exp(−γ(x − x')²)`.
pub fn fit_svr(xs: &[f64], ys: &[f64], params: &SvrParams) -> Result<SvrModel> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return invalid(format!("need at least 2 paired samples, got {} xs and {} ys", n, ys.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return invalid("training data contains non-finite values");
    }
    let SvrParams { gamma, epsilon, c, kkt_tol, max_iterations } = *params;
    if !(gamma > 0.0 && c > 0.0 && epsilon >= 0.0 && kkt_tol > 0.0) {
        return invalid(format!("need γ > 0, C > 0, ε ≥ 0 and a positive tolerance (γ={gamma}, C={c}, ε={epsilon})"));
    }

    let kernel: Vec<f64> = (0..n * n).map(|k| gaussian(gamma, xs[k / n], xs[k % n])).collect();
    let k = |i: usize, j: usize| kernel[(i % n) * n + j % n];
    // Variables 0..n are α (sign +1), n..2n are α* (sign −1).
    let m = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let mut a = vec![0.0; m];
    let mut grad: Vec<f64> = (0..m).map(|t| if t < n { epsilon - ys[t] } else { epsilon + ys[t - n] }).collect();
    let q = |s: usize, t: usize| sign(s) * sign(t) * k(s, t);

    let mut iterations = 0;
    let mut violation;
    loop {
        // i maximizes −y_t G_t over the "up" set.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..m {
            let up = if sign(t) > 0.0 { a[t] < c } else { a[t] > 0.0 };
            if up && -sign(t) * grad[t] >= gmax {
                gmax = -sign(t) * grad[t];
                i_sel = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..m {
            let low = if sign(t) > 0.0 { a[t] > 0.0 } else { a[t] < c };
            if !low {
                continue;
            }
            let v = sign(t) * grad[t];
            gmax2 = gmax2.max(v);
            if i_sel == usize::MAX {
                continue;
            }
            let diff = gmax + v;
            if diff > 0.0 {
                let quad = (q(i_sel, i_sel) + q(t, t) - 2.0 * sign(i_sel) * sign(t) * q(i_sel, t)).max(TAU);
                let obj = -diff * diff / quad;
                if obj <= best_obj {
                    best_obj = obj;
                    j_sel = t;
                }
            }
        }
        violation = gmax + gmax2;
        if violation < kkt_tol || i_sel == usize::MAX || j_sel == usize::MAX {
            break;
        }
        if iterations >= max_iterations {
            let best = Box::new(assemble(xs, &a, &grad, n, c, params, iterations));
            return Err(Error::SvrNotConverged { violation, iterations, best });
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (a[i], a[j]);
        if sign(i) != sign(j) {
            let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > 0.0 {
                if a[i] > c {
                    a[i] = c;
                    a[j] = c - diff;
                }
            } else if a[j] > c {
                a[j] = c;
                a[i] = c + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > c {
                if a[i] > c {
                    a[i] = c;
                    a[j] = sum - c;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > c {
                if a[j] > c {
                    a[j] = c;
                    a[i] = sum - c;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }
        let (di, dj) = (a[i] - old_i, a[j] - old_j);
        for t in 0..m {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }
    Ok(assemble(xs, &a, &grad, n, c, params, iterations))
}

fn assemble(xs: &[f64], a: &[f64], grad: &[f64], n: usize, c: f64, params: &SvrParams, iterations: usize) -> SvrModel {
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    // Offset from free variables, else the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum) = (0usize, 0.0);
    for t in 0..2 * n {
        let yg = sign(t) * grad[t];
        let at_upper = a[t] >= c;
        let at_lower = a[t] <= 0.0;
        if at_upper {
            if sign(t) < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if at_lower {
            if sign(t) > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
    let mut model = SvrModel {
        support_xs: Vec::new(),
        dual_coefs: Vec::new(),
        support_index: Vec::new(),
        bias: -rho,
        gamma: params.gamma,
        epsilon: params.epsilon,
        c,
        iterations,
    };
    for i in 0..n {
        let beta = a[i] - a[i + n];
        if beta != 0.0 {
            model.support_xs.push(xs[i]);
            model.dual_coefs.push(beta);
            model.support_index.push(i);
        }
    }
    model
}

/// Layers ordered coarse to fine; the prediction is their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsvrModel {
    pub layers: Vec<SvrModel>,
    pub ladder: ScaleLadder,
}

impl HsvrModel {
    pub fn predict(&self, x: f64) -> f64 {
        self.layers.iter().map(|l| l.predict(x)).sum()
    }

    /// Prediction using only the first `depth` layers.
    pub fn predict_partial(&self, x: f64, depth: usize) -> f64 {
        self.layers.iter().take(depth).map(|l| l.predict(x)).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fits layer `ℓ` to the residual of layers `0..ℓ` at scale `ladder.scales[ℓ]`.
/// `ε`, `C` and the KKT tolerance are shared by all layers.
pub fn fit_hsvr(signal: &SampledSignal, ladder: &ScaleLadder, epsilon: f64, c: f64) -> Result<HsvrModel> {
    if ladder.scales.is_empty() {
        return invalid("ladder has no scales");
    }
    let xs = signal.xs();
    let mut residual = signal.ys().to_vec();
    let kkt_tol = DEFAULT_KKT_FACTOR * signal.range().max(f64::MIN_POSITIVE);
    let mut layers = Vec::with_capacity(ladder.scales.len());
    for &gamma in &ladder.scales {
        let params = SvrParams { gamma, epsilon, c, kkt_tol, max_iterations: MAX_ITERATIONS };
        let layer = fit_svr(xs, &residual, &params)?;
        for (r, &x) in residual.iter_mut().zip(xs) {
            *r -= layer.predict(x);
        }
        layers.push(layer);
    }
    Ok(HsvrModel { layers, ladder: ladder.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub max_err: f64,
}

pub fn metrics(predicted: &[f64], truth: &[f64]) -> Metrics {
    let n = truth.len().max(1) as f64;
    let errs: Vec<f64> = predicted.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    Metrics {
        mae: errs.iter().sum::<f64>() / n,
        rmse: (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        max_err: errs.iter().copied().fold(0.0, f64::max),
    }
}

/// Errors against `dense`, which should sample the same function at a finer
/// resolution than the training grid.
pub fn evaluate(model: &HsvrModel, dense: &SampledSignal) -> Metrics {
    let pred: Vec<f64> = dense.xs().iter().map(|&x| model.predict(x)).collect();
    metrics(&pred, dense.ys())
}
