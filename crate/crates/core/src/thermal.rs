//! Finite-temperature density matrices and canonical (fixed-occupation)
//! susceptibilities, built in the eigenbasis of the Hamiltonian.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{check_dims, sym_eigendecompose, EigenDecomposition, Matrix, SymmetricMatrix};

/// Relative width below which two eigenvalues count as degenerate.
pub const DEGENERACY_REL: f64 = 1e-8;
/// Bisection target for `|Tr[f(H)] - n_occ|`.
pub const MU_TRACE_TOLERANCE: f64 = 1e-12;
const MU_BISECTION_CAP: usize = 200;

/// A scalar function together with its derivative.
pub trait SpectralFunction {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

/// `f(x) = 1 / (exp(beta_t (x - mu)) + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fermi {
    pub beta_t: f64,
    pub mu: f64,
}

impl SpectralFunction for Fermi {
    fn value(&self, x: f64) -> f64 {
        fermi(self.beta_t * (x - self.mu))
    }

    fn derivative(&self, x: f64) -> f64 {
        let f = self.value(x);
        -self.beta_t * f * (1.0 - f)
    }
}

/// Overflow-free `1 / (exp(t) + 1)`.
pub fn fermi(t: f64) -> f64 {
    if t > 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// `f(x) = slope x + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub slope: f64,
    pub offset: f64,
}

impl SpectralFunction for Linear {
    fn value(&self, x: f64) -> f64 {
        self.slope * x + self.offset
    }

    fn derivative(&self, _x: f64) -> f64 {
        self.slope
    }
}

/// Divided differences `L_ij = f[lambda_i, lambda_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoewnerMatrix {
    pub entries: Matrix,
}

impl LoewnerMatrix {
    /// Pairs with `|l_i - l_j| <= degeneracy_rel * max(1, |l_i|, |l_j|)` use
    /// `f'` at the midpoint instead of the difference quotient.
    pub fn new(values: &[f64], f: &impl SpectralFunction, degeneracy_rel: f64) -> Self {
        let n = values.len();
        let fv: Vec<f64> = values.iter().map(|&l| f.value(l)).collect();
        let mut entries = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let (li, lj) = (values[i], values[j]);
                let delta = degeneracy_rel * 1f64.max(li.abs()).max(lj.abs());
                let v = if (li - lj).abs() <= delta {
                    f.derivative(0.5 * (li + lj))
                } else {
                    (fv[i] - fv[j]) / (li - lj)
                };
                entries[(i, j)] = v;
                entries[(j, i)] = v;
            }
        }
        LoewnerMatrix { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn hadamard(&self, x: &Matrix) -> Matrix {
        self.entries.component_mul(x)
    }
}

/// `V (L o (V^T direction V)) V^T`, the Fréchet derivative of `f` at the
/// decomposed matrix along `direction`.
pub fn loewner_directional_derivative(
    eig: &EigenDecomposition,
    direction: &SymmetricMatrix,
    f: &impl SpectralFunction,
    degeneracy_rel: f64,
) -> Result<SymmetricMatrix> {
    let l = LoewnerMatrix::new(&eig.values, f, degeneracy_rel);
    derivative_with(eig, &l, direction)
}

fn derivative_with(
    eig: &EigenDecomposition,
    l: &LoewnerMatrix,
    direction: &SymmetricMatrix,
) -> Result<SymmetricMatrix> {
    check_dims(eig.dim(), direction.dim())?;
    let inner = l.hadamard(&eig.to_eigenbasis(direction.as_matrix()));
    Ok(SymmetricMatrix::symmetrize(eig.from_eigenbasis(&inner)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThermalConfig {
    pub beta_t: f64,
    pub n_occ: f64,
    pub mu0: f64,
    /// Kept for report layout only. `ThermalState` leaves it `None`; the
    /// derivative methods return `mu1` next to the matrix instead.
    pub mu1: Option<f64>,
}

/// Fermi density matrix of `H` at fixed occupation, with its eigenbasis kept
/// for derivative evaluations.
#[derive(Debug, Clone)]
pub struct ThermalState {
    pub config: ThermalConfig,
    pub eig: EigenDecomposition,
    pub d: SymmetricMatrix,
    loewner: LoewnerMatrix,
}

impl ThermalState {
    pub fn new(h: &SymmetricMatrix, beta_t: f64, n_occ: f64) -> Result<Self> {
        Self::from_eigen(sym_eigendecompose(h)?, beta_t, n_occ)
    }

    pub fn from_eigen(eig: EigenDecomposition, beta_t: f64, n_occ: f64) -> Result<Self> {
        if !(beta_t.is_finite() && beta_t > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "inverse temperature must be positive, got {beta_t}"
            )));
        }
        let n = eig.dim();
        if !(n_occ > 0.0 && n_occ < n as f64) {
            return Err(Error::InvalidOccupation { n_occ, dim: n });
        }
        let mu0 = solve_mu(&eig.values, beta_t, n_occ)?;
        let f = Fermi { beta_t, mu: mu0 };
        let d = eig.reconstruct_with(|l| f.value(l))?;
        let loewner = LoewnerMatrix::new(&eig.values, &f, DEGENERACY_REL);
        Ok(ThermalState {
            config: ThermalConfig {
                beta_t,
                n_occ,
                mu0,
                mu1: None,
            },
            eig,
            d,
            loewner,
        })
    }

    pub fn fermi(&self) -> Fermi {
        Fermi {
            beta_t: self.config.beta_t,
            mu: self.config.mu0,
        }
    }

    pub fn loewner(&self) -> &LoewnerMatrix {
        &self.loewner
    }

    /// Derivative of `f(H)` along `direction` at fixed `mu0`.
    pub fn fixed_mu_derivative(&self, direction: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        derivative_with(&self.eig, &self.loewner, direction)
    }

    /// `Tr[deriv(I)] = sum_i f'(lambda_i)`.
    pub fn occupation_response(&self) -> f64 {
        let f = self.fermi();
        self.eig.values.iter().map(|&l| f.derivative(l)).sum()
    }

    /// Trace-neutral derivative along `direction - mu1 I`, returning `(chi, mu1)`.
    pub fn canonical_derivative(&self, direction: &SymmetricMatrix) -> Result<(SymmetricMatrix, f64)> {
        let d_dir = self.fixed_mu_derivative(direction)?;
        let t_id = self.occupation_response();
        if !(t_id.is_finite() && t_id.abs() > f64::MIN_POSITIVE * self.eig.dim() as f64) {
            return Err(Error::VanishingOccupationResponse);
        }
        let mu1 = d_dir.trace() / t_id;
        let f = self.fermi();
        let d_id = self.eig.reconstruct_with(|l| f.derivative(l))?;
        Ok((d_dir.lincomb(1.0, &d_id, -mu1)?, mu1))
    }
}

fn occupation(values: &[f64], beta_t: f64, mu: f64) -> f64 {
    values.iter().map(|&l| fermi(beta_t * (l - mu))).sum()
}

/// Bisection for `Tr[f(H)] = n_occ` over `[l_min - 10/beta, l_max + 10/beta]`.
fn solve_mu(values: &[f64], beta_t: f64, n_occ: f64) -> Result<f64> {
    let lo0 = values.first().copied().unwrap_or(0.0) - 10.0 / beta_t;
    let hi0 = values.last().copied().unwrap_or(0.0) + 10.0 / beta_t;
    let (mut lo, mut hi) = (lo0, hi0);
    if !(occupation(values, beta_t, lo) <= n_occ && occupation(values, beta_t, hi) >= n_occ) {
        return Err(Error::MuBracket {
            lo,
            hi,
            target: n_occ,
        });
    }
    let mut best = (f64::INFINITY, 0.5 * (lo + hi));
    for _ in 0..MU_BISECTION_CAP {
        let mid = 0.5 * (lo + hi);
        let occ = occupation(values, beta_t, mid);
        let err = (occ - n_occ).abs();
        if err < best.0 {
            best = (err, mid);
        }
        if err <= MU_TRACE_TOLERANCE || mid <= lo || mid >= hi {
            break;
        }
        if occ < n_occ {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > 1e-10 {
        return Err(Error::MuBracket {
            lo: lo0,
            hi: hi0,
            target: n_occ,
        });
    }
    Ok(best.1)
}

/// Fermi density matrix with `Tr[D] = n_occ`, returning `(D, mu0)`.
pub fn fermi_matrix_and_mu(h: &SymmetricMatrix, beta_t: f64, n_occ: f64) -> Result<(SymmetricMatrix, f64)> {
    let s = ThermalState::new(h, beta_t, n_occ)?;
    Ok((s.d, s.config.mu0))
}

/// Canonical susceptibility of `a`, returning `(chi, mu1)`.
pub fn canonical_susceptibility(
    h: &SymmetricMatrix,
    a: &SymmetricMatrix,
    beta_t: f64,
    n_occ: f64,
) -> Result<(SymmetricMatrix, f64)> {
    ThermalState::new(h, beta_t, n_occ)?.canonical_derivative(a)
}

/// Canonical first-order density matrix along `h1`, returning `(D1, mu1)`.
pub fn thermal_dm_response(
    h: &SymmetricMatrix,
    h1: &SymmetricMatrix,
    beta_t: f64,
    n_occ: f64,
) -> Result<(SymmetricMatrix, f64)> {
    canonical_susceptibility(h, h1, beta_t, n_occ)
}
