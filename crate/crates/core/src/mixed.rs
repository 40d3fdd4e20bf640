//! Emulated half-precision arithmetic with single-precision accumulation.
//!
//! A matrix is carried as two binary16 parts, `X ~ X_h + X_l`, and products
//! keep the three leading cross terms. Every elementary product of two
//! binary16 values is exact in binary32, so accumulating in `f32` reproduces
//! what a half-precision multiply unit with wide accumulators would return.

use std::str::FromStr;

use half::f16;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dims, gershgorin_bounds, Matrix, SpectralBounds, SymmetricMatrix};
use crate::sp2::{expand, Schedule, Sp2Algebra, Sp2Trace};

/// Largest finite binary16 value.
pub const BINARY16_MAX: f64 = 65504.0;

/// Nearest binary16 value (ties to even), widened back to `f64`.
pub fn round_binary16(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NotFinite {
            what: "binary16 input",
        });
    }
    if x.abs() > BINARY16_MAX {
        return Err(Error::Binary16Overflow { value: x });
    }
    Ok(f16::from_f32(round_to_odd_f32(x)).to_f64())
}

/// `f64 -> f32` rounding to odd. A following `f32 -> f16` nearest-even
/// rounding then equals direct `f64 -> f16` rounding; half's own `f64` path
/// drops the sticky bits below the `f32` mantissa.
fn round_to_odd_f32(x: f64) -> f32 {
    let t = x as f32;
    if f64::from(t) == x {
        return t;
    }
    let mut bits = t.to_bits();
    if f64::from(t).abs() > x.abs() {
        bits -= 1;
    }
    f32::from_bits(bits | 1)
}

/// Matrix whose entries are all exactly representable in binary16.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfMatrix {
    data: Matrix,
}

impl HalfMatrix {
    /// Rounds every entry to binary16.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        let mut data = m.clone();
        for v in data.iter_mut() {
            *v = round_binary16(*v)?;
        }
        Ok(HalfMatrix { data })
    }

    pub fn zeros(n: usize) -> Self {
        HalfMatrix {
            data: Matrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.data
    }

    fn to_f32(&self) -> F32Matrix {
        F32Matrix::from_matrix(&self.data)
    }
}

/// `X = X_h + X_l` with `X_h = fl16(X)` and `X_l = fl16(X - fl32(X_h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMatrix {
    pub high: HalfMatrix,
    pub low: HalfMatrix,
}

impl SplitMatrix {
    pub fn dim(&self) -> usize {
        self.high.dim()
    }

    /// `X_h + X_l` in double precision.
    pub fn reconstruct(&self) -> Matrix {
        self.high.as_matrix() + self.low.as_matrix()
    }
}

pub fn split(x: &SymmetricMatrix) -> Result<SplitMatrix> {
    split_matrix(x.as_matrix())
}

pub fn split_matrix(x: &Matrix) -> Result<SplitMatrix> {
    let high = HalfMatrix::from_matrix(x)?;
    let mut rest = x - high.as_matrix().map(|v| v as f32 as f64);
    for v in rest.iter_mut() {
        *v = round_binary16(*v)?;
    }
    Ok(SplitMatrix {
        high,
        low: HalfMatrix { data: rest },
    })
}

/// Row-major square `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
struct F32Matrix {
    n: usize,
    data: Vec<f32>,
}

impl F32Matrix {
    fn zeros(n: usize) -> Self {
        F32Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    fn from_matrix(m: &Matrix) -> Self {
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(m[(i, j)] as f32);
            }
        }
        F32Matrix { n, data }
    }

    fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, j| f64::from(self.data[i * self.n + j]))
    }

    /// `self += a b`, each entry accumulated over `k` in ascending order.
    fn gemm_acc(&mut self, a: &F32Matrix, b: &F32Matrix) {
        let n = self.n;
        self.data
            .par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                let a_row = &a.data[i * n..(i + 1) * n];
                for (k, &aik) in a_row.iter().enumerate() {
                    if aik == 0.0 {
                        continue;
                    }
                    let b_row = &b.data[k * n..(k + 1) * n];
                    for (c, &bkj) in row.iter_mut().zip(b_row) {
                        *c += aik * bkj;
                    }
                }
            });
    }

    fn transpose(&self) -> F32Matrix {
        let n = self.n;
        let mut out = F32Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j];
            }
        }
        out
    }

    fn add(&self, other: &F32Matrix) -> F32Matrix {
        F32Matrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    /// `a self + b other`, rounded to `f32` per entry.
    fn lincomb(&self, a: f32, other: &F32Matrix, b: f32) -> F32Matrix {
        F32Matrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }
}

/// Split-precision product engine; counts the matrix multiplications issued.
#[derive(Debug, Clone, Default)]
pub struct MixedGemm {
    pub multiplications: usize,
    /// Adds the `X_l Y_l` term, normally dropped. For accuracy studies only.
    pub include_low_low: bool,
}

impl MixedGemm {
    pub fn new() -> Self {
        Self::default()
    }

    fn mul_acc(&mut self, c: &mut F32Matrix, a: &F32Matrix, b: &F32Matrix) {
        self.multiplications += 1;
        c.gemm_acc(a, b);
    }

    /// `X_h Y_h + X_h Y_l + X_l Y_h`, accumulated in single precision.
    ///
    /// With `symmetric_same` (requires `X = Y = X^T`) this becomes
    /// `P + Q + Q^T` with `P = X_h X_h` and `Q = X_h X_l`: two multiplications.
    pub fn product(&mut self, x: &SplitMatrix, y: &SplitMatrix, symmetric_same: bool) -> Result<Matrix> {
        check_dims(x.dim(), y.dim())?;
        let (xh, xl) = (x.high.to_f32(), x.low.to_f32());
        let n = x.dim();
        if symmetric_same {
            if x != y || xh != xh.transpose() || xl != xl.transpose() {
                return Err(Error::InvalidArgument(
                    "symmetric product needs identical symmetric factors".into(),
                ));
            }
            let mut p = F32Matrix::zeros(n);
            self.mul_acc(&mut p, &xh, &xh);
            let mut q = F32Matrix::zeros(n);
            self.mul_acc(&mut q, &xh, &xl);
            let mut out = p.add(&q).add(&q.transpose());
            if self.include_low_low {
                self.mul_acc(&mut out, &xl, &xl);
            }
            return Ok(out.to_matrix());
        }
        let (yh, yl) = (y.high.to_f32(), y.low.to_f32());
        let mut c = F32Matrix::zeros(n);
        self.mul_acc(&mut c, &xh, &yh);
        self.mul_acc(&mut c, &xh, &yl);
        self.mul_acc(&mut c, &xl, &yh);
        if self.include_low_low {
            self.mul_acc(&mut c, &xl, &yl);
        }
        Ok(c.to_matrix())
    }

    /// `YX + XY` for symmetric `X`, `Y` from `T = Y_h X_h + Y_h X_l + X_h Y_l`
    /// as `T + T^T`: three multiplications.
    pub fn anticommutator(&mut self, y: &SplitMatrix, x: &SplitMatrix) -> Result<SymmetricMatrix> {
        Ok(SymmetricMatrix::symmetrize(self.anticommutator_f32(y, x)?.to_matrix()))
    }

    fn anticommutator_f32(&mut self, y: &SplitMatrix, x: &SplitMatrix) -> Result<F32Matrix> {
        check_dims(x.dim(), y.dim())?;
        let (xh, xl) = (x.high.to_f32(), x.low.to_f32());
        let (yh, yl) = (y.high.to_f32(), y.low.to_f32());
        let mut t = F32Matrix::zeros(x.dim());
        self.mul_acc(&mut t, &yh, &xh);
        self.mul_acc(&mut t, &yh, &xl);
        self.mul_acc(&mut t, &xh, &yl);
        Ok(t.add(&t.transpose()))
    }
}

/// One split-precision product, returning `(XY, multiplications)`.
pub fn mixed_gemm(x: &SplitMatrix, y: &SplitMatrix, symmetric_same: bool) -> Result<(Matrix, usize)> {
    let mut g = MixedGemm::new();
    let out = g.product(x, y, symmetric_same)?;
    Ok((out, g.multiplications))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F64,
    F32,
    Split16,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            "split16" => Ok(Precision::Split16),
            other => Err(Error::InvalidArgument(format!("unknown precision {other:?}"))),
        }
    }
}

fn to_f32_sym(m: &Matrix) -> SymmetricMatrix {
    SymmetricMatrix::symmetrize(m.map(|v| v as f32 as f64))
}

fn f32_sym(m: &F32Matrix) -> SymmetricMatrix {
    SymmetricMatrix::symmetrize(m.to_matrix())
}

/// SP2 arithmetic where iterates are stored in `f32`, re-split into binary16
/// pairs before every product, and multiplied with [`MixedGemm`].
/// Traces and branch decisions stay in double precision.
#[derive(Debug, Clone, Default)]
pub struct SplitHalfAlgebra {
    pub gemm: MixedGemm,
}

impl Sp2Algebra for SplitHalfAlgebra {
    type Mat = SymmetricMatrix;

    fn dim(&self, x: &SymmetricMatrix) -> usize {
        x.dim()
    }

    fn bounds(&self, h: &SymmetricMatrix) -> SpectralBounds {
        gershgorin_bounds(h)
    }

    fn initial(&mut self, h: &SymmetricMatrix, alpha: f64, beta: f64) -> Result<SymmetricMatrix> {
        Ok(to_f32_sym(h.affine(alpha, beta).as_matrix()))
    }

    fn scale(&mut self, x: &SymmetricMatrix, s: f64) -> Result<SymmetricMatrix> {
        Ok(to_f32_sym(x.scaled(s).as_matrix()))
    }

    fn square(&mut self, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        let sx = split(x)?;
        let p = self.gemm.product(&sx, &sx, true)?;
        Ok(SymmetricMatrix::symmetrize(p))
    }

    fn trace(&self, x: &SymmetricMatrix) -> f64 {
        x.trace()
    }

    fn projection_step(&mut self, x: &SymmetricMatrix, x2: &SymmetricMatrix, sigma: f64) -> Result<SymmetricMatrix> {
        let (a, b) = ((1.0 - sigma) as f32, sigma as f32);
        let out = F32Matrix::from_matrix(x.as_matrix()).lincomb(a, &F32Matrix::from_matrix(x2.as_matrix()), b);
        Ok(f32_sym(&out))
    }

    fn response_step(&mut self, y: &SymmetricMatrix, x: &SymmetricMatrix, sigma: f64) -> Result<SymmetricMatrix> {
        let anti = self.gemm.anticommutator_f32(&split(y)?, &split(x)?)?;
        let (a, b) = ((1.0 - sigma) as f32, sigma as f32);
        Ok(f32_sym(&F32Matrix::from_matrix(y.as_matrix()).lincomb(a, &anti, b)))
    }
}

/// SP2 arithmetic entirely in `f32` (products rounded per operation).
#[derive(Debug, Clone, Default)]
pub struct SingleAlgebra {
    pub multiplications: usize,
}

impl SingleAlgebra {
    fn product(&mut self, a: &SymmetricMatrix, b: &SymmetricMatrix) -> F32Matrix {
        self.multiplications += 1;
        let mut c = F32Matrix::zeros(a.dim());
        c.gemm_acc(&F32Matrix::from_matrix(a.as_matrix()), &F32Matrix::from_matrix(b.as_matrix()));
        c
    }
}

impl Sp2Algebra for SingleAlgebra {
    type Mat = SymmetricMatrix;

    fn dim(&self, x: &SymmetricMatrix) -> usize {
        x.dim()
    }

    fn bounds(&self, h: &SymmetricMatrix) -> SpectralBounds {
        gershgorin_bounds(h)
    }

    fn initial(&mut self, h: &SymmetricMatrix, alpha: f64, beta: f64) -> Result<SymmetricMatrix> {
        Ok(to_f32_sym(h.affine(alpha, beta).as_matrix()))
    }

    fn scale(&mut self, x: &SymmetricMatrix, s: f64) -> Result<SymmetricMatrix> {
        Ok(to_f32_sym(x.scaled(s).as_matrix()))
    }

    fn square(&mut self, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        Ok(f32_sym(&self.product(x, x)))
    }

    fn trace(&self, x: &SymmetricMatrix) -> f64 {
        x.trace()
    }

    fn projection_step(&mut self, x: &SymmetricMatrix, x2: &SymmetricMatrix, sigma: f64) -> Result<SymmetricMatrix> {
        let (a, b) = ((1.0 - sigma) as f32, sigma as f32);
        let out = F32Matrix::from_matrix(x.as_matrix()).lincomb(a, &F32Matrix::from_matrix(x2.as_matrix()), b);
        Ok(f32_sym(&out))
    }

    fn response_step(&mut self, y: &SymmetricMatrix, x: &SymmetricMatrix, sigma: f64) -> Result<SymmetricMatrix> {
        let yx = self.product(y, x);
        let anti = yx.add(&yx.transpose());
        let (a, b) = ((1.0 - sigma) as f32, sigma as f32);
        Ok(f32_sym(&F32Matrix::from_matrix(y.as_matrix()).lincomb(a, &anti, b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Seed is a Hamiltonian perturbation; the result is `D1`.
    Perturbation,
    /// Seed is an observable; the result is its susceptibility.
    Susceptibility,
}

#[derive(Debug, Clone)]
pub struct ReducedPrecisionRun {
    pub d0: SymmetricMatrix,
    pub response: SymmetricMatrix,
    pub trace: Sp2Trace,
    pub multiplications: usize,
}

/// Merged ground-state and response recursion with every dense product
/// replaced by the split binary16 kernel (5 multiplications per step).
///
/// Both modes run the same recursion; `mode` only names the seed's role.
pub fn mixed_response_pipeline(
    h0: &SymmetricMatrix,
    seed: &SymmetricMatrix,
    n_occ: usize,
    mode: PipelineMode,
) -> Result<ReducedPrecisionRun> {
    let _ = mode;
    reduced_precision_pipeline(h0, seed, n_occ, Precision::Split16)
}

/// Same recursion at a chosen arithmetic precision.
pub fn reduced_precision_pipeline(
    h0: &SymmetricMatrix,
    seed: &SymmetricMatrix,
    n_occ: usize,
    precision: Precision,
) -> Result<ReducedPrecisionRun> {
    fn run<A: Sp2Algebra<Mat = SymmetricMatrix>>(
        alg: &mut A,
        h0: &SymmetricMatrix,
        seed: &SymmetricMatrix,
        n_occ: usize,
    ) -> Result<(SymmetricMatrix, SymmetricMatrix, Sp2Trace)> {
        let mut e = expand(alg, h0, &[seed], Schedule::Decide { n_occ, bounds: None }, false)?;
        Ok((e.d0, e.responses.pop().unwrap(), e.trace))
    }
    let ((d0, response, trace), multiplications) = match precision {
        Precision::Split16 => {
            let mut alg = SplitHalfAlgebra::default();
            let out = run(&mut alg, h0, seed, n_occ)?;
            (out, alg.gemm.multiplications)
        }
        Precision::F32 => {
            let mut alg = SingleAlgebra::default();
            let out = run(&mut alg, h0, seed, n_occ)?;
            (out, alg.multiplications)
        }
        Precision::F64 => {
            let mut alg = crate::sp2::DenseAlgebra;
            // two products per step: X^2 and Y X
            let out = run(&mut alg, h0, seed, n_occ)?;
            let m = out.2.m_steps;
            (out, 2 * m)
        }
    };
    Ok(ReducedPrecisionRun {
        d0,
        response,
        trace,
        multiplications,
    })
}
