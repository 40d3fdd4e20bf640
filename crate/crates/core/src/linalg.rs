//! Dense real symmetric matrix algebra.
//!
//! [`SymmetricMatrix`] is the representation of every Hamiltonian, observable,
//! density matrix and susceptibility in the crate. General (non-symmetric)
//! intermediates such as `Y·X` products or position derivatives of inverse
//! factors are carried as plain [`Matrix`] values.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// General dense square matrix.
pub type Matrix = DMatrix<f64>;

/// Relative asymmetry accepted (and silently repaired) by the constructors.
pub const ASYMMETRY_TOLERANCE: f64 = 1e-8;

const JACOBI_MAX_SWEEPS: usize = 30;
const JACOBI_RELATIVE_THRESHOLD: f64 = 1e-12;
const PD_RELATIVE_TOLERANCE: f64 = 1e-10;

/// Dense real symmetric `N x N` matrix.
///
/// Stored entries are exactly symmetric. The asymmetry that was removed when
/// the matrix was built from raw data is kept for diagnostics.
#[derive(Debug, Clone)]
pub struct SymmetricMatrix {
    data: Matrix,
    asymmetry: f64,
}

impl PartialEq for SymmetricMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl SymmetricMatrix {
    /// Builds a symmetric matrix from raw data, repairing asymmetry up to
    /// `1e-8 * ||X||_F` and rejecting anything larger.
    pub fn new(data: Matrix) -> Result<Self> {
        let (rows, cols) = data.shape();
        if rows != cols || rows == 0 {
            return Err(Error::NotSquare { rows, cols });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotFinite { what: "matrix" });
        }
        let skew = (&data - data.transpose()) * 0.5;
        let asymmetry = skew.norm();
        let tolerance = ASYMMETRY_TOLERANCE * data.norm();
        if asymmetry > tolerance {
            return Err(Error::Asymmetric {
                asymmetry,
                tolerance,
            });
        }
        let mut m = Self::symmetrize(data);
        m.asymmetry = asymmetry;
        Ok(m)
    }

    /// Row-major construction.
    pub fn from_row_slice(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: values.len(),
            });
        }
        Self::new(Matrix::from_row_slice(n, n, values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut flat = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::NotSquare {
                    rows: n,
                    cols: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        Self::from_row_slice(n, &flat)
    }

    /// `(X + X^T) / 2` without any tolerance check. Used for products whose
    /// exact value is symmetric.
    pub fn symmetrize(data: Matrix) -> Self {
        let t = data.transpose();
        SymmetricMatrix {
            data: (data + t) * 0.5,
            asymmetry: 0.0,
        }
    }

    /// `P + P^T`, exactly symmetric.
    pub fn from_sum_with_transpose(p: &Matrix) -> Self {
        SymmetricMatrix {
            data: p + p.transpose(),
            asymmetry: 0.0,
        }
    }

    pub fn identity(n: usize) -> Self {
        SymmetricMatrix {
            data: Matrix::identity(n, n),
            asymmetry: 0.0,
        }
    }

    pub fn zeros(n: usize) -> Self {
        SymmetricMatrix {
            data: Matrix::zeros(n, n),
            asymmetry: 0.0,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut data = Matrix::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            data[(i, i)] = *d;
        }
        SymmetricMatrix {
            data,
            asymmetry: 0.0,
        }
    }

    /// Builds from a closure evaluated on the upper triangle.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        SymmetricMatrix {
            data,
            asymmetry: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Asymmetry norm `||(X - X^T)/2||_F` removed at construction.
    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.data[(i, i)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.data[(i, j)]).collect())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.amax()
    }

    pub fn scaled(&self, s: f64) -> Self {
        SymmetricMatrix {
            data: &self.data * s,
            asymmetry: 0.0,
        }
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &SymmetricMatrix, b: f64) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(SymmetricMatrix {
            data: &self.data * a + &other.data * b,
            asymmetry: 0.0,
        })
    }

    /// `a * I + b * self`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        let mut data = &self.data * b;
        for i in 0..self.dim() {
            data[(i, i)] += a;
        }
        SymmetricMatrix {
            data,
            asymmetry: 0.0,
        }
    }

    /// General product `self * other`.
    pub fn matmul(&self, other: &SymmetricMatrix) -> Matrix {
        &self.data * &other.data
    }

    /// `self^2`, symmetrized.
    pub fn square(&self) -> Self {
        Self::symmetrize(&self.data * &self.data)
    }

    /// `Tr[self * other]`.
    pub fn trace_product(&self, other: &SymmetricMatrix) -> f64 {
        trace_of_product(&self.data, &other.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &SymmetricMatrix) -> f64 {
        (&self.data - &other.data).norm()
    }
}

impl Add for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn add(self, rhs: &SymmetricMatrix) -> SymmetricMatrix {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch");
        SymmetricMatrix {
            data: &self.data + &rhs.data,
            asymmetry: 0.0,
        }
    }
}

impl Sub for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn sub(self, rhs: &SymmetricMatrix) -> SymmetricMatrix {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch");
        SymmetricMatrix {
            data: &self.data - &rhs.data,
            asymmetry: 0.0,
        }
    }
}

impl Mul<f64> for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn mul(self, rhs: f64) -> SymmetricMatrix {
        self.scaled(rhs)
    }
}

impl Neg for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn neg(self) -> SymmetricMatrix {
        self.scaled(-1.0)
    }
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `Tr[A * B] = sum_ij A_ij B_ji`.
pub fn trace_of_product(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Eigenvalues in ascending order with orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V diag(f(lambda)) V^T`.
    pub fn reconstruct_with(&self, mut f: impl FnMut(f64) -> f64) -> Result<SymmetricMatrix> {
        let mut scaled = self.vectors.clone();
        for (k, &lambda) in self.values.iter().enumerate() {
            let fk = f(lambda);
            if !fk.is_finite() {
                return Err(Error::NonFiniteFunctionValue { eigenvalue: lambda });
            }
            scaled.column_mut(k).scale_mut(fk);
        }
        Ok(SymmetricMatrix::symmetrize(
            scaled * self.vectors.transpose(),
        ))
    }

    /// `V^T X V`, the representation of `x` in the eigenbasis.
    pub fn to_eigenbasis(&self, x: &Matrix) -> Matrix {
        self.vectors.transpose() * x * &self.vectors
    }

    /// `V X V^T`.
    pub fn from_eigenbasis(&self, x: &Matrix) -> Matrix {
        &self.vectors * x * self.vectors.transpose()
    }
}

/// Cyclic Jacobi eigensolver.
///
/// Sweeps until the off-diagonal Frobenius norm drops below
/// `1e-12 * ||X||_F`, at most 30 sweeps. Eigenvalues are returned in
/// ascending order, ties kept in original index order.
pub fn sym_eigendecompose(x: &SymmetricMatrix) -> Result<EigenDecomposition> {
    if !x.is_finite() {
        return Err(Error::NotFinite { what: "eigensolver input" });
    }
    let n = x.dim();
    let mut a = x.as_matrix().clone();
    let mut v = Matrix::identity(n, n);
    let threshold = JACOBI_RELATIVE_THRESHOLD * a.norm();

    let mut off = off_diagonal_norm(&a);
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off <= threshold {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate_columns(&mut a, p, q, c, s);
                rotate_rows(&mut a, p, q, c, s);
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        off = off_diagonal_norm(&a);
    }
    if off > threshold {
        return Err(Error::EigenNoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
            off_norm: off,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok(EigenDecomposition { values, vectors })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

// column p <- c*p - s*q, column q <- s*p + c*q
fn rotate_columns(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..m.nrows() {
        let mp = m[(k, p)];
        let mq = m[(k, q)];
        m[(k, p)] = c * mp - s * mq;
        m[(k, q)] = s * mp + c * mq;
    }
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..m.ncols() {
        let mp = m[(p, k)];
        let mq = m[(q, k)];
        m[(p, k)] = c * mp - s * mq;
        m[(q, k)] = s * mp + c * mq;
    }
}

/// `f(X)` evaluated in the eigenbasis of `X`.
pub fn apply_matrix_function(x: &SymmetricMatrix, f: impl FnMut(f64) -> f64) -> Result<SymmetricMatrix> {
    sym_eigendecompose(x)?.reconstruct_with(f)
}

/// Symmetric (Löwdin) inverse square root `Z = S^{-1/2}`, so that `Z^T S Z = I`.
pub fn inverse_sqrt_factor(s: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let eig = sym_eigendecompose(s)?;
    let lo = eig.values[0];
    let hi = *eig.values.last().unwrap();
    if hi <= 0.0 || lo <= PD_RELATIVE_TOLERANCE * hi {
        return Err(Error::NotPositiveDefinite { eigenvalue: lo });
    }
    eig.reconstruct_with(|l| 1.0 / l.sqrt())
}

/// Direction of a congruence transform between atomic-orbital and
/// orthonormal representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Congruence {
    /// Operators into the orthonormal basis: `Z^T X Z`.
    ToOrthogonal,
    /// Operators back to the atomic-orbital basis: `Z^{-T} X Z^{-1}`.
    FromOrthogonal,
    /// Density matrices back to the atomic-orbital basis: `Z X Z^T`.
    DensityFromOrthogonal,
}

pub fn congruence_transform(
    x: &SymmetricMatrix,
    z: &SymmetricMatrix,
    direction: Congruence,
) -> Result<SymmetricMatrix> {
    check_dims(x.dim(), z.dim())?;
    let zm = z.as_matrix();
    let xm = x.as_matrix();
    let out = match direction {
        Congruence::ToOrthogonal => zm.transpose() * xm * zm,
        Congruence::DensityFromOrthogonal => zm * xm * zm.transpose(),
        Congruence::FromOrthogonal => {
            let inv = zm.clone().try_inverse().ok_or(Error::Singular)?;
            inv.transpose() * xm * inv
        }
    };
    Ok(SymmetricMatrix::symmetrize(out))
}

/// Lower and upper bound on the spectrum of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub eps_min: f64,
    pub eps_max: f64,
}

impl SpectralBounds {
    pub fn new(eps_min: f64, eps_max: f64) -> Result<Self> {
        if !(eps_min.is_finite() && eps_max.is_finite() && eps_min < eps_max) {
            return Err(Error::InvalidBounds {
                min: eps_min,
                max: eps_max,
            });
        }
        Ok(SpectralBounds { eps_min, eps_max })
    }

    pub fn width(&self) -> f64 {
        self.eps_max - self.eps_min
    }

    pub fn contains(&self, x: f64) -> bool {
        self.eps_min <= x && x <= self.eps_max
    }
}

/// Gershgorin disc bounds. A multiple of the identity has a point spectrum,
/// which is widened by `±0.5 * max(1, |c|)` to keep a non-empty interval.
pub fn gershgorin_bounds(x: &SymmetricMatrix) -> SpectralBounds {
    let m = x.as_matrix();
    let n = x.dim();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let radius: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        lo = lo.min(m[(i, i)] - radius);
        hi = hi.max(m[(i, i)] + radius);
    }
    gershgorin_from_extremes(lo, hi)
}

pub(crate) fn gershgorin_from_extremes(lo: f64, hi: f64) -> SpectralBounds {
    if lo < hi {
        SpectralBounds {
            eps_min: lo,
            eps_max: hi,
        }
    } else {
        let pad = 0.5 * lo.abs().max(1.0);
        SpectralBounds {
            eps_min: lo - pad,
            eps_max: hi + pad,
        }
    }
}
