//! Dynamic mode decomposition of snapshot sequences.
//!
//! [`dmd_rrr`] follows the DMD_RRR recipe: column-scaled thin SVD of the
//! "before" matrix `X`, rank truncation, Rayleigh quotient `S = Uᵀ Y V Σ⁻¹`,
//! Ritz pairs of `S`, and per-pair residuals evaluated on the data without
//! ever forming the full operator.
//!
//! The decomposition is written `x_t ≈ Σ_j c_j λ_j^t m_j` with unit-norm
//! modes `m_j` and scalar coefficients `c_j` fitted to the first snapshot.
//! Some literature swaps the names of `m` and `c`; here `m` is always the
//! mode vector and `c` the coefficient.

use std::io::{Read, Write};
use std::path::Path;

use faer::linalg::solvers::SolveLstsq;
use faer::{Mat, MatRef};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{self, Complex};

pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_DELAY: usize = 10;
/// Relative imaginary leakage above which a real reconstruction is flagged.
pub const LEAKAGE_WARN: f64 = 1e-6;

/// Column-per-epoch snapshot matrix (`dim` rows, `count` columns).
#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    data: Mat<f64>,
}

impl SnapshotMatrix {
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let Some(first) = columns.first() else {
            return invalid("no snapshots");
        };
        let dim = first.as_ref().len();
        if dim == 0 {
            return invalid("snapshots have zero dimension");
        }
        if let Some(bad) = columns.iter().position(|c| c.as_ref().len() != dim) {
            return invalid(format!("snapshot {bad} has a different dimension"));
        }
        let mut data = Mat::<f64>::zeros(dim, columns.len());
        for (j, c) in columns.iter().enumerate() {
            let dst = data.col_as_slice_mut(j);
            for (d, &v) in dst.iter_mut().zip(c.as_ref()) {
                if !v.is_finite() {
                    return invalid(format!("snapshot {j} contains non-finite values"));
                }
                *d = v;
            }
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn count(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        self.data.col_as_slice(j)
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self { data: Mat::from_fn(self.dim(), self.count(), |i, j| factor * self.data[(i, j)]) }
    }

    pub(crate) fn as_faer(&self) -> MatRef<'_, f64> {
        self.data.as_ref()
    }
}

/// Hankel (delay) embedding of a scalar series: column `t` is
/// `(x_t, x_{t+1}, …, x_{t+depth-1})`.
pub fn delay_embed(series: &[f64], depth: usize) -> Result<SnapshotMatrix> {
    if depth == 0 {
        return invalid("delay depth must be at least 1");
    }
    if series.len() < depth {
        return invalid(format!("series of length {} is shorter than delay {depth}", series.len()));
    }
    let columns: Vec<&[f64]> = series.windows(depth).collect();
    SnapshotMatrix::from_columns(&columns)
}

/// Unit-norm modes stored as `basis · coords` (columns of `coords` are the
/// Ritz vectors of the Rayleigh quotient in the orthonormal POD basis).
/// Holding the factors avoids materializing a dense `d × r` complex matrix.
#[derive(Debug, Clone)]
struct ModeBasis {
    basis: Mat<f64>,
    coords: Mat<Complex>,
}

impl ModeBasis {
    fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// `basis · v` for a complex coordinate vector.
    fn lift(&self, v: &[Complex]) -> Vec<Complex> {
        let re = Mat::<f64>::from_fn(v.len(), 1, |i, _| v[i].re);
        let im = Mat::<f64>::from_fn(v.len(), 1, |i, _| v[i].im);
        let a = &self.basis * &re;
        let b = &self.basis * &im;
        (0..self.dim()).map(|i| Complex::new(a[(i, 0)], b[(i, 0)])).collect()
    }

    fn mode(&self, j: usize) -> Vec<Complex> {
        let w: Vec<Complex> = (0..self.coords.nrows()).map(|i| self.coords[(i, j)]).collect();
        self.lift(&w)
    }
}

/// Output of one DMD run, ordered by descending `|c_j|`.
#[derive(Debug, Clone)]
pub struct DmdResult {
    pub eigenvalues: Vec<Complex>,
    pub coefficients: Vec<Complex>,
    pub residuals: Vec<f64>,
    pub rank: usize,
    modes: ModeBasis,
}

/// JSON view of a [`DmdResult`] (modes are written separately).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmdSummary {
    pub eigenvalues: Vec<[f64; 2]>,
    pub coefficients: Vec<[f64; 2]>,
    pub residuals: Vec<f64>,
    pub rank: usize,
}

impl DmdResult {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.modes.dim()
    }

    /// The `j`-th unit-norm mode.
    pub fn mode(&self, j: usize) -> Vec<Complex> {
        self.modes.mode(j)
    }

    pub fn summary(&self) -> DmdSummary {
        let pair = |z: &Complex| [z.re, z.im];
        DmdSummary {
            eigenvalues: self.eigenvalues.iter().map(pair).collect(),
            coefficients: self.coefficients.iter().map(pair).collect(),
            residuals: self.residuals.clone(),
            rank: self.rank,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }

    /// Writes all modes as a binary matrix: little-endian `u64` rows and
    /// columns, then `(re, im)` pairs of `f64` in column-major order.
    pub fn write_modes(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(&(self.dim() as u64).to_le_bytes())?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        for j in 0..self.len() {
            for z in self.mode(j) {
                out.write_all(&z.re.to_le_bytes())?;
                out.write_all(&z.im.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Index of the eigenvalue closest to `1 + 0i`.
    pub fn nearest_to_one(&self) -> Option<usize> {
        self.eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
            .map(|(i, _)| i)
    }

    /// Index of the complex-conjugate partner of mode `j`, if it has one.
    pub fn conjugate_partner(&self, j: usize) -> Option<usize> {
        let lambda = self.eigenvalues[j];
        if lambda.im == 0.0 {
            return None;
        }
        let target = lambda.conj();
        let tol = 1e-8 * lambda.norm().max(1.0);
        self.eigenvalues
            .iter()
            .enumerate()
            .filter(|&(i, z)| i != j && (z - target).norm() <= tol)
            .min_by(|a, b| (a.1 - target).norm().total_cmp(&(b.1 - target).norm()))
            .map(|(i, _)| i)
    }
}

/// Reads a mode file written by [`DmdResult::write_modes`]; returns modes as columns.
pub fn read_modes(path: impl AsRef<Path>) -> Result<Vec<Vec<Complex>>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::Format("mode file shorter than its header".into()));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != rows * cols * 16 {
        return Err(Error::Format(format!(
            "mode file body has {} bytes, header implies {}",
            body.len(),
            rows * cols * 16
        )));
    }
    let f = |o: usize| f64::from_le_bytes(body[o..o + 8].try_into().unwrap());
    Ok((0..cols)
        .map(|j| {
            (0..rows)
                .map(|i| {
                    let o = (j * rows + i) * 16;
                    Complex::new(f(o), f(o + 8))
                })
                .collect()
        })
        .collect())
}

/// Ritz-pair DMD of a snapshot sequence.
///
/// `X` is the first `count-1` columns and `Y` the last `count-1`. Singular
/// values with `σ_k < rank_tolerance · σ_1` are truncated.
pub fn dmd_rrr(snapshots: &SnapshotMatrix, rank_tolerance: f64) -> Result<DmdResult> {
    if snapshots.count() < 3 {
        return invalid(format!("dmd needs at least 3 snapshots, got {}", snapshots.count()));
    }
    if !(0.0..1.0).contains(&rank_tolerance) {
        return invalid(format!("rank tolerance {rank_tolerance} outside [0, 1)"));
    }
    let all = snapshots.as_faer();
    let t = all.ncols() - 1;
    let x = all.subcols(0, t);
    let y = all.subcols(1, t);

    // Column scaling makes the truncation insensitive to snapshot magnitudes.
    let scales: Vec<f64> = (0..t)
        .map(|j| {
            let n = x.col(j).norm_l2();
            if n > 0.0 { n } else { 1.0 }
        })
        .collect();
    let xs = Mat::<f64>::from_fn(x.nrows(), t, |i, j| x[(i, j)] / scales[j]);
    let (u, sigma, v) = numerics::thin_svd(xs.as_ref())?;
    drop(xs);

    let s1 = sigma.first().copied().unwrap_or(0.0);
    let k = sigma
        .iter()
        .take_while(|&&s| s > 0.0 && s >= rank_tolerance * s1)
        .count();
    if k == 0 {
        return Err(Error::DegenerateData("all snapshots are zero".into()));
    }
    let uk = u.subcols(0, k).to_owned();
    drop(u);

    // B = Y D⁻¹ V_k Σ_k⁻¹, S = U_kᵀ B
    let right = Mat::<f64>::from_fn(t, k, |i, j| v[(i, j)] / (scales[i] * sigma[j]));
    let b = y * &right;
    let s = uk.transpose() * &b;

    let evd = numerics::eig_faer(s.as_ref())?;
    let w = Mat::<Complex>::from_fn(k, k, |i, j| evd.vectors.get(i, j));
    let lambdas = evd.values;

    let residuals = ritz_residuals(uk.as_ref(), b.as_ref(), w.as_ref(), &lambdas);
    drop(b);

    // min_c ‖U W c − x_0‖ reduces to min_c ‖W c − U_kᵀ x_0‖ since U_k is orthonormal.
    let x0 = all.subcols(0, 1);
    let proj = uk.transpose() * x0;
    let rhs = Mat::<Complex>::from_fn(k, 1, |i, _| Complex::new(proj[(i, 0)], 0.0));
    let coef_mat = w.col_piv_qr().solve_lstsq(&rhs);
    let coefficients: Vec<Complex> = (0..k).map(|i| coef_mat[(i, 0)]).collect();
    if coefficients.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NumericalFailure("non-finite mode coefficients".into()));
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| coefficients[b].norm().total_cmp(&coefficients[a].norm()));
    let coords = Mat::<Complex>::from_fn(k, k, |i, j| w[(i, order[j])]);
    Ok(DmdResult {
        eigenvalues: order.iter().map(|&j| lambdas[j]).collect(),
        coefficients: order.iter().map(|&j| coefficients[j]).collect(),
        residuals: order.iter().map(|&j| residuals[j]).collect(),
        rank: k,
        modes: ModeBasis { basis: uk, coords },
    })
}

/// `‖B w_j − λ_j U w_j‖₂` for each Ritz pair, processed in column blocks.
fn ritz_residuals(u: MatRef<'_, f64>, b: MatRef<'_, f64>, w: MatRef<'_, Complex>, lambdas: &[Complex]) -> Vec<f64> {
    const BLOCK: usize = 32;
    let k = w.ncols();
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    while start < k {
        let n = BLOCK.min(k - start);
        let w_re = Mat::<f64>::from_fn(k, n, |i, j| w[(i, start + j)].re);
        let w_im = Mat::<f64>::from_fn(k, n, |i, j| w[(i, start + j)].im);
        let bw_re = b * &w_re;
        let bw_im = b * &w_im;
        let uw_re = u * &w_re;
        let uw_im = u * &w_im;
        for j in 0..n {
            let l = lambdas[start + j];
            let mut acc = 0.0;
            for i in 0..u.nrows() {
                let re = bw_re[(i, j)] - (l.re * uw_re[(i, j)] - l.im * uw_im[(i, j)]);
                let im = bw_im[(i, j)] - (l.re * uw_im[(i, j)] + l.im * uw_re[(i, j)]);
                acc += re * re + im * im;
            }
            let norm_uw: f64 = (0..u.nrows())
                .map(|i| uw_re[(i, j)].powi(2) + uw_im[(i, j)].powi(2))
                .sum::<f64>()
                .sqrt();
            out.push(acc.sqrt() / norm_uw.max(f64::MIN_POSITIVE));
        }
        start += n;
    }
    out
}

/// `Σ_{j ∈ indices} c_j λ_j^t m_j`.
pub fn reconstruct(result: &DmdResult, indices: &[usize], t: u32) -> Result<Vec<Complex>> {
    if let Some(&bad) = indices.iter().find(|&&j| j >= result.len()) {
        return invalid(format!("mode index {bad} out of range ({} modes)", result.len()));
    }
    let k = result.modes.coords.nrows();
    let mut combo = vec![Complex::new(0.0, 0.0); k];
    for &j in indices {
        let weight = result.coefficients[j] * result.eigenvalues[j].powu(t);
        for (i, c) in combo.iter_mut().enumerate() {
            *c += weight * result.modes.coords[(i, j)];
        }
    }
    Ok(result.modes.lift(&combo))
}

/// Real part of [`reconstruct`] after completing conjugate pairs.
pub fn reconstruct_real(result: &DmdResult, indices: &[usize], t: u32) -> Result<Vec<f64>> {
    let indices = with_conjugates(result, indices);
    let z = reconstruct(result, &indices, t)?;
    let re_norm = z.iter().map(|c| c.re * c.re).sum::<f64>().sqrt();
    let im_norm = z.iter().map(|c| c.im * c.im).sum::<f64>().sqrt();
    if im_norm > LEAKAGE_WARN * re_norm.max(f64::MIN_POSITIVE) {
        warn!("real reconstruction discards imaginary part of relative size {:.3e}", im_norm / re_norm.max(f64::MIN_POSITIVE));
    }
    Ok(z.into_iter().map(|c| c.re).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionPolicy {
    TopK(usize),
    /// Prefix of the `|c|` ordering ending at the eigenvalue nearest to one.
    ThroughEigenvalueOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSelection {
    pub indices: Vec<usize>,
    /// Set when a `TopK` request exceeded the mode count.
    pub clamped: bool,
}

pub fn select_modes(result: &DmdResult, policy: SelectionPolicy) -> Result<ModeSelection> {
    if result.is_empty() {
        return Err(Error::DegenerateData("no modes to select from".into()));
    }
    let (count, clamped) = match policy {
        SelectionPolicy::TopK(k) => (k.min(result.len()), k > result.len()),
        SelectionPolicy::ThroughEigenvalueOne => (result.nearest_to_one().unwrap() + 1, false),
    };
    let prefix: Vec<usize> = (0..count).collect();
    Ok(ModeSelection { indices: with_conjugates(result, &prefix), clamped })
}

fn with_conjugates(result: &DmdResult, indices: &[usize]) -> Vec<usize> {
    let mut out = indices.to_vec();
    for &j in indices {
        if j < result.len() {
            if let Some(p) = result.conjugate_partner(j) {
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
    }
    out.sort_unstable();
    out
}
