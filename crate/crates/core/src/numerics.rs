//! Dense linear algebra and Fourier primitives.
//!
//! Matrices are stored row-major. Factorizations return column-orthonormal
//! factors: `U` and `V` of a thin SVD hold singular vectors in their columns,
//! and eigenvector matrices hold one unit-2-norm eigenvector per column.
//!
//! SVD and eigendecomposition are delegated to `faer`; the DFT is delegated to
//! `rustfft`. Everything here is a pure function of its inputs.

use faer::{Mat, MatRef};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Complex = Complex64;

/// Relative reconstruction bound guaranteed by [`svd`].
pub const SVD_RECONSTRUCTION_TOL: f64 = 1e-10;
/// Relative eigen-residual bound guaranteed by [`eig`] on diagonalizable input.
pub const EIG_RESIDUAL_TOL: f64 = 1e-8;
/// Relative inverse round-trip bound for [`dft`] / [`idft`].
pub const DFT_ROUNDTRIP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    /// Builds a matrix from row-major entries, rejecting wrong lengths and
    /// non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("matrix contains non-finite entries");
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &RealMatrix) -> Result<Self> {
        if self.cols != rhs.rows {
            return invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            ));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(rhs.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    pub(crate) fn from_faer(m: MatRef<'_, f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

/// Row-major complex matrix; used for eigenproblems and eigenvector sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            ));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return invalid("matrix contains non-finite entries");
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_real(m: &RealMatrix) -> Self {
        Self::from_fn(m.rows(), m.cols(), |i, j| Complex::new(m.get(i, j), 0.0))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Complex {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<Complex> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn matvec(&self, v: &[Complex]) -> Vec<Complex> {
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Largest singular value, i.e. the spectral norm.
    pub fn spectral_norm(&self) -> f64 {
        let m = Mat::<Complex>::from_fn(self.rows, self.cols, |i, j| self.get(i, j));
        match m.singular_values() {
            Ok(s) => s.first().copied().unwrap_or(0.0),
            Err(_) => self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        }
    }
}

/// Thin singular value decomposition `M = U diag(σ) Vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: RealMatrix,
    pub singular_values: Vec<f64>,
    pub v: RealMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> RealMatrix {
        let k = self.singular_values.len();
        RealMatrix::from_fn(self.u.rows(), self.v.rows(), |i, j| {
            (0..k)
                .map(|l| self.u.get(i, l) * self.singular_values[l] * self.v.get(j, l))
                .sum()
        })
    }
}

pub fn svd(m: &RealMatrix) -> Result<Svd> {
    if m.rows() == 0 || m.cols() == 0 {
        return invalid("svd of an empty matrix");
    }
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return invalid("svd input contains non-finite entries");
    }
    let (u, s, v) = thin_svd(m.to_faer().as_ref())?;
    Ok(Svd {
        u: RealMatrix::from_faer(u.as_ref()),
        singular_values: s,
        v: RealMatrix::from_faer(v.as_ref()),
    })
}

/// Thin SVD on a faer matrix; singular values descending.
pub(crate) fn thin_svd(m: MatRef<'_, f64>) -> Result<(Mat<f64>, Vec<f64>, Mat<f64>)> {
    let svd = m
        .thin_svd()
        .map_err(|e| Error::NumericalFailure(format!("svd did not converge: {e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("svd produced non-finite singular values".into()));
    }
    Ok((svd.U().to_owned(), s, svd.V().to_owned()))
}

/// Eigenvalues with one unit-2-norm eigenvector per column.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<Complex>,
    pub vectors: ComplexMatrix,
}

pub fn eig(m: &ComplexMatrix) -> Result<Eigen> {
    if m.rows() != m.cols() {
        return invalid(format!("eig needs a square matrix, got {}x{}", m.rows(), m.cols()));
    }
    if m.rows() == 0 {
        return invalid("eig of an empty matrix");
    }
    let a = Mat::<Complex>::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j));
    let evd = a
        .eigen()
        .map_err(|e| Error::NumericalFailure(format!("eigendecomposition failed: {e:?}")))?;
    collect_eigen(evd.S().column_vector().iter().copied().collect(), evd.U())
}

pub fn eig_real(m: &RealMatrix) -> Result<Eigen> {
    if m.rows() != m.cols() {
        return invalid(format!("eig needs a square matrix, got {}x{}", m.rows(), m.cols()));
    }
    eig_faer(m.to_faer().as_ref())
}

pub(crate) fn eig_faer(a: MatRef<'_, f64>) -> Result<Eigen> {
    if a.nrows() == 0 {
        return invalid("eig of an empty matrix");
    }
    let evd = a
        .eigen()
        .map_err(|e| Error::NumericalFailure(format!("eigendecomposition failed: {e:?}")))?;
    collect_eigen(evd.S().column_vector().iter().copied().collect(), evd.U())
}

fn collect_eigen(values: Vec<Complex>, u: MatRef<'_, Complex>) -> Result<Eigen> {
    if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NumericalFailure("non-finite eigenvalue".into()));
    }
    let n = u.nrows();
    let norms: Vec<f64> = (0..u.ncols())
        .map(|j| (0..n).map(|i| u[(i, j)].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    if norms.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::NumericalFailure("degenerate eigenvector".into()));
    }
    let vectors = ComplexMatrix::from_fn(n, u.ncols(), |i, j| u[(i, j)] / norms[j]);
    Ok(Eigen { values, vectors })
}

/// Forward DFT, `X[k] = Σ_n x[n] e^{-2πi kn/N}` (unnormalized).
pub fn dft(x: &[Complex]) -> Result<Vec<Complex>> {
    if x.is_empty() {
        return invalid("dft of an empty sequence");
    }
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    Ok(buf)
}

/// Inverse of [`dft`], including the `1/N` factor.
pub fn idft(x: &[Complex]) -> Result<Vec<Complex>> {
    if x.is_empty() {
        return invalid("idft of an empty sequence");
    }
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|z| *z *= scale);
    Ok(buf)
}

pub fn dft_real(x: &[f64]) -> Result<Vec<Complex>> {
    let buf: Vec<Complex> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    dft(&buf)
}

#[cfg(test)]
pub(crate) fn norm2(v: &[Complex]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
