//! Numerically thresholded symmetric sparse matrices.
//!
//! Entries below the drop tolerance `tau` are removed after every
//! multiply-add. Rows are computed in parallel but each row is accumulated in
//! a fixed order and assembled in row order, so results are bit-reproducible.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{check_dims, gershgorin_from_extremes, Matrix, SpectralBounds, SymmetricMatrix};
use crate::sp2::Sp2Algebra;

/// Default drop tolerance.
pub const DEFAULT_TAU: f64 = 1e-6;

/// Row-compressed symmetric sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    tau: f64,
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
            tau: 0.0,
        }
    }

    /// Builds from `(row, col, value)` triplets of a symmetric matrix; both
    /// triangles must be present. Duplicates are summed, zeros are skipped.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("entry ({i},{j}) outside {n}x{n}")));
            }
            if !v.is_finite() {
                return Err(Error::NotFinite { what: "sparse entry" });
            }
            rows[i].push((j, v));
        }
        let mut m = SparseMatrix {
            n,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            tau: 0.0,
        };
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    m.cols.push(c);
                    m.vals.push(v);
                }
            }
            m.row_ptr.push(m.cols.len());
        }
        if !m.is_symmetric() {
            return Err(Error::InvalidArgument("sparse triplets are not symmetric".into()));
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// Largest number of stored entries in any row.
    pub fn max_row_nnz(&self) -> usize {
        (0..self.n)
            .map(|i| self.row_ptr[i + 1] - self.row_ptr[i])
            .max()
            .unwrap_or(0)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(k) => v[k],
            Err(_) => 0.0,
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// `Tr[self * other]` for symmetric operands.
    pub fn trace_product(&self, other: &SparseMatrix) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                acc += a * other.get(*j, i);
            }
        }
        acc
    }

    pub fn trace_product_dense(&self, other: &SymmetricMatrix) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                acc += a * other.get(*j, i);
            }
        }
        acc
    }

    pub fn to_dense(&self) -> SymmetricMatrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (j, x) in c.iter().zip(v) {
                m[(i, *j)] = *x;
            }
        }
        SymmetricMatrix::symmetrize(m)
    }

    pub fn scaled(&self, s: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `a I + b self`.
    pub fn affine(&self, a: f64, b: f64) -> SparseMatrix {
        let rows = (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                let mut out: Vec<(usize, f64)> = Vec::with_capacity(c.len() + 1);
                let mut placed = false;
                for (j, x) in c.iter().zip(v) {
                    if !placed && *j >= i {
                        if *j == i {
                            out.push((i, a + b * x));
                        } else {
                            out.push((i, a));
                            out.push((*j, b * x));
                        }
                        placed = true;
                    } else {
                        out.push((*j, b * x));
                    }
                }
                if !placed {
                    out.push((i, a));
                }
                out
            })
            .collect();
        Self::assemble(self.n, rows, self.tau)
    }

    fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).all(|(j, x)| self.get(*j, i) == *x)
        })
    }

    fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.n + 1];
        for &c in &self.cols {
            counts[c + 1] += 1;
        }
        for i in 0..self.n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (j, x) in c.iter().zip(v) {
                let slot = next[*j];
                cols[slot] = i;
                vals[slot] = *x;
                next[*j] += 1;
            }
        }
        SparseMatrix {
            n: self.n,
            row_ptr: counts,
            cols,
            vals,
            tau: self.tau,
        }
    }

    /// Drops every entry with magnitude below `tau`. Row entries must be sorted.
    fn assemble(n: usize, rows: Vec<Vec<(usize, f64)>>, tau: f64) -> SparseMatrix {
        let mut m = SparseMatrix {
            n,
            row_ptr: Vec::with_capacity(n + 1),
            cols: Vec::new(),
            vals: Vec::new(),
            tau,
        };
        m.row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                if v != 0.0 && v.abs() >= tau {
                    m.cols.push(j);
                    m.vals.push(v);
                }
            }
            m.row_ptr.push(m.cols.len());
        }
        m
    }

    /// Gershgorin bounds from the stored entries.
    pub fn gershgorin_bounds(&self) -> SpectralBounds {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n {
            let (c, v) = self.row(i);
            let mut diag = 0.0;
            let mut radius = 0.0;
            for (j, x) in c.iter().zip(v) {
                if *j == i {
                    diag = *x;
                } else {
                    radius += x.abs();
                }
            }
            lo = lo.min(diag - radius);
            hi = hi.max(diag + radius);
        }
        gershgorin_from_extremes(lo, hi)
    }
}

/// Thresholds a dense symmetric matrix. An entry pair `(i,j)/(j,i)` is dropped
/// only when both magnitudes are below `tau`; exact zeros are never stored.
pub fn sparsify(x: &SymmetricMatrix, tau: f64) -> Result<SparseMatrix> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::InvalidArgument(format!("drop tolerance must be >= 0, got {tau}")));
    }
    let n = x.dim();
    let m = x.as_matrix();
    let rows = (0..n)
        .map(|i| {
            (0..n)
                .filter_map(|j| {
                    let v = m[(i, j)];
                    let keep = v != 0.0 && (v.abs() >= tau || m[(j, i)].abs() >= tau);
                    keep.then_some((j, v))
                })
                .collect()
        })
        .collect();
    Ok(SparseMatrix::assemble(n, rows, 0.0).with_tau(tau))
}

impl SparseMatrix {
    fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}

/// `a X Y + b Z`, symmetrized and then thresholded at `tau`.
///
/// The caller asserts that the exact result is symmetric (e.g. `X^2`, or the
/// anticommutator `XY + YX = 2 sym(XY)`); the computed product is replaced by
/// its symmetric part before entries below `tau` are dropped.
pub fn sp_multiply_add(
    a: f64,
    x: &SparseMatrix,
    y: &SparseMatrix,
    b: f64,
    z: &SparseMatrix,
    tau: f64,
) -> Result<SparseMatrix> {
    check_dims(x.n, y.n)?;
    check_dims(x.n, z.n)?;
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::InvalidArgument(format!("drop tolerance must be >= 0, got {tau}")));
    }
    let n = x.n;
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0f64; n], vec![false; n], Vec::<usize>::new()),
            |(acc, mark, touched), i| {
                let (xc, xv) = x.row(i);
                if a != 0.0 {
                    for (k, xik) in xc.iter().zip(xv) {
                        let (yc, yv) = y.row(*k);
                        for (j, ykj) in yc.iter().zip(yv) {
                            if !mark[*j] {
                                mark[*j] = true;
                                touched.push(*j);
                            }
                            acc[*j] += a * xik * ykj;
                        }
                    }
                }
                if b != 0.0 {
                    let (zc, zv) = z.row(i);
                    for (j, zij) in zc.iter().zip(zv) {
                        if !mark[*j] {
                            mark[*j] = true;
                            touched.push(*j);
                        }
                        acc[*j] += b * zij;
                    }
                }
                touched.sort_unstable();
                let row = touched.iter().map(|&j| (j, acc[j])).collect();
                for &j in touched.iter() {
                    acc[j] = 0.0;
                    mark[j] = false;
                }
                touched.clear();
                row
            },
        )
        .collect();
    let raw = SparseMatrix::assemble(n, rows, 0.0);
    let t = raw.transpose();
    let sym_rows = (0..n)
        .map(|i| merge_average(raw.row(i), t.row(i)))
        .collect();
    Ok(SparseMatrix::assemble(n, sym_rows, tau))
}

fn merge_average(p: (&[usize], &[f64]), q: (&[usize], &[f64])) -> Vec<(usize, f64)> {
    let (pc, pv) = p;
    let (qc, qv) = q;
    let mut out = Vec::with_capacity(pc.len().max(qc.len()));
    let (mut i, mut j) = (0, 0);
    while i < pc.len() || j < qc.len() {
        let ci = pc.get(i).copied().unwrap_or(usize::MAX);
        let cj = qc.get(j).copied().unwrap_or(usize::MAX);
        if ci == cj {
            out.push((ci, 0.5 * (pv[i] + qv[j])));
            i += 1;
            j += 1;
        } else if ci < cj {
            out.push((ci, 0.5 * pv[i]));
            i += 1;
        } else {
            out.push((cj, 0.5 * qv[j]));
            j += 1;
        }
    }
    out
}

/// SP2 arithmetic on thresholded sparse matrices; every product is followed
/// by a threshold pass at `tau`.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdedAlgebra {
    pub tau: f64,
}

impl ThresholdedAlgebra {
    pub fn new(tau: f64) -> Self {
        ThresholdedAlgebra { tau }
    }
}

impl Sp2Algebra for ThresholdedAlgebra {
    type Mat = SparseMatrix;

    fn dim(&self, x: &SparseMatrix) -> usize {
        x.dim()
    }

    fn bounds(&self, h: &SparseMatrix) -> SpectralBounds {
        h.gershgorin_bounds()
    }

    fn initial(&mut self, h: &SparseMatrix, alpha: f64, beta: f64) -> Result<SparseMatrix> {
        Ok(h.affine(alpha, beta))
    }

    fn scale(&mut self, x: &SparseMatrix, s: f64) -> Result<SparseMatrix> {
        Ok(x.scaled(s))
    }

    fn square(&mut self, x: &SparseMatrix) -> Result<SparseMatrix> {
        sp_multiply_add(1.0, x, x, 0.0, x, self.tau)
    }

    fn trace(&self, x: &SparseMatrix) -> f64 {
        x.trace()
    }

    fn projection_step(&mut self, x: &SparseMatrix, x2: &SparseMatrix, sigma: f64) -> Result<SparseMatrix> {
        if sigma > 0.0 {
            Ok(x2.clone())
        } else {
            // 2X - X^2
            let id = SparseMatrix::identity(x.n);
            sp_multiply_add(2.0, &id, x, -1.0, x2, self.tau)
        }
    }

    fn response_step(&mut self, y: &SparseMatrix, x: &SparseMatrix, sigma: f64) -> Result<SparseMatrix> {
        // sym(aYX + bY) with a = 2 sigma gives sigma (YX + XY) + (1 - sigma) Y
        sp_multiply_add(2.0 * sigma, y, x, 1.0 - sigma, y, self.tau)
    }
}
