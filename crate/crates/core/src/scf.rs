//! Self-consistent ground states and coupled-perturbed responses with a
//! linear self-consistency kernel `G` and linear mixing.

use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dims, congruence_transform, inverse_sqrt_factor, Congruence, SymmetricMatrix};
use crate::models::random_symmetric;
use crate::response::dm_perturbation_replay;
use crate::sp2::{sp2_ground_state, Sp2Trace};
use crate::thermal::ThermalState;

/// Linear, symmetry-preserving map `G` from densities to potentials.
pub trait SelfConsistencyKernel: Debug + Send + Sync {
    fn name(&self) -> &str;
    fn strength(&self) -> f64;
    fn apply(&self, x: &SymmetricMatrix) -> Result<SymmetricMatrix>;
    /// Kernels that vanish identically let the loops finish in one pass.
    fn is_zero(&self) -> bool {
        false
    }
}

pub fn apply_kernel(g: &dyn SelfConsistencyKernel, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    g.apply(x)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroKernel;

impl SelfConsistencyKernel for ZeroKernel {
    fn name(&self) -> &str {
        "zero"
    }
    fn strength(&self) -> f64 {
        0.0
    }
    fn apply(&self, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        Ok(SymmetricMatrix::zeros(x.dim()))
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// `G(X) = U diag(X)`.
#[derive(Debug, Clone, Copy)]
pub struct DiagonalHubbard {
    pub u: f64,
}

impl SelfConsistencyKernel for DiagonalHubbard {
    fn name(&self) -> &str {
        "hubbard"
    }
    fn strength(&self) -> f64 {
        self.u
    }
    fn apply(&self, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        let d: Vec<f64> = x.diagonal().iter().map(|v| self.u * v).collect();
        Ok(SymmetricMatrix::from_diagonal(&d))
    }
    fn is_zero(&self) -> bool {
        self.u == 0.0
    }
}

/// `G(X) = B X C + C X B` for symmetric `B`, `C`.
#[derive(Debug, Clone)]
pub struct BilinearKernel {
    pub b: SymmetricMatrix,
    pub c: SymmetricMatrix,
    strength: f64,
}

impl BilinearKernel {
    pub fn new(b: SymmetricMatrix, c: SymmetricMatrix) -> Result<Self> {
        check_dims(b.dim(), c.dim())?;
        let strength = b.frobenius_norm() * c.frobenius_norm();
        Ok(BilinearKernel { b, c, strength })
    }

    /// Random unit-Frobenius `B` and `C`, with `B` scaled by `strength`.
    pub fn random(n: usize, strength: f64, rng: &mut impl Rng) -> Self {
        let r1 = random_symmetric(n, rng);
        let r2 = random_symmetric(n, rng);
        let b = r1.scaled(strength / r1.frobenius_norm().max(f64::MIN_POSITIVE));
        let c = r2.scaled(1.0 / r2.frobenius_norm().max(f64::MIN_POSITIVE));
        BilinearKernel { b, c, strength }
    }
}

impl SelfConsistencyKernel for BilinearKernel {
    fn name(&self) -> &str {
        "bilinear"
    }
    fn strength(&self) -> f64 {
        self.strength
    }
    fn apply(&self, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        check_dims(self.b.dim(), x.dim())?;
        let bxc = self.b.as_matrix() * x.as_matrix() * self.c.as_matrix();
        Ok(SymmetricMatrix::from_sum_with_transpose(&bxc))
    }
    fn is_zero(&self) -> bool {
        self.strength == 0.0
    }
}

/// Builds a kernel from `NAME:STRENGTH` (`zero`, `hubbard:U`, `bilinear:s`).
/// The bilinear kernel draws `B` and `C` from `rng`.
pub fn kernel_from_spec(spec: &str, n: usize, rng: &mut impl Rng) -> Result<Box<dyn SelfConsistencyKernel>> {
    let (name, strength) = match spec.split_once(':') {
        Some((name, s)) => {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad kernel strength in {spec:?}")))?;
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("bad kernel strength in {spec:?}")));
            }
            (name.trim(), v)
        }
        None => (spec.trim(), 0.0),
    };
    match name {
        "zero" => Ok(Box::new(ZeroKernel)),
        "hubbard" | "diagonal-hubbard" | "diagonal_hubbard" => Ok(Box::new(DiagonalHubbard { u: strength })),
        "bilinear" => Ok(Box::new(BilinearKernel::random(n, strength, rng))),
        other => Err(Error::InvalidArgument(format!("unknown kernel {other:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScfConfig {
    pub c_mix: f64,
    pub eps_scf: f64,
    pub max_iters: usize,
    /// Inverse electronic temperature; `None` selects the zero-temperature path.
    pub beta_t: Option<f64>,
}

impl Default for ScfConfig {
    fn default() -> Self {
        ScfConfig {
            c_mix: 0.3,
            eps_scf: 1e-11,
            max_iters: 500,
            beta_t: None,
        }
    }
}

impl ScfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_mix > 0.0 && self.c_mix <= 1.0) {
            return Err(Error::InvalidArgument(format!("c_mix must lie in (0, 1], got {}", self.c_mix)));
        }
        if self.eps_scf.is_nan() || self.eps_scf <= 0.0 {
            return Err(Error::InvalidArgument("eps_scf must be positive".into()));
        }
        if let Some(b) = self.beta_t {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidArgument("beta_t must be positive".into()));
            }
        }
        Ok(())
    }
}

/// How the orthogonal-basis density was obtained; responses reuse it.
#[derive(Debug, Clone)]
pub enum GroundStateSolver {
    ZeroTemperature(Sp2Trace),
    FiniteTemperature(Box<ThermalState>),
}

#[derive(Debug, Clone)]
pub struct ScfState {
    pub d: SymmetricMatrix,
    pub h_eff: SymmetricMatrix,
    /// `Z^T H_eff Z`.
    pub h_perp: SymmetricMatrix,
    /// Löwdin factor `S^{-1/2}` (identity for orthonormal bases).
    pub z: SymmetricMatrix,
    pub n_occ: usize,
    /// Chemical potential at finite temperature.
    pub mu0: Option<f64>,
    pub solver: GroundStateSolver,
    pub residuals: Vec<f64>,
}

impl ScfState {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    pub fn trace(&self) -> Option<&Sp2Trace> {
        match &self.solver {
            GroundStateSolver::ZeroTemperature(t) => Some(t),
            GroundStateSolver::FiniteTemperature(_) => None,
        }
    }
}

fn solve_orthogonal(h_perp: &SymmetricMatrix, n_occ: usize, cfg: &ScfConfig) -> Result<(SymmetricMatrix, GroundStateSolver, Option<f64>)> {
    match cfg.beta_t {
        None => {
            let (d, t) = sp2_ground_state(h_perp, n_occ, None)?;
            Ok((d, GroundStateSolver::ZeroTemperature(t), None))
        }
        Some(beta) => {
            let s = ThermalState::new(h_perp, beta, n_occ as f64)?;
            let mu = s.config.mu0;
            Ok((s.d.clone(), GroundStateSolver::FiniteTemperature(Box::new(s)), Some(mu)))
        }
    }
}

/// Self-consistent ground state of `H = H_core + G(D)`.
///
/// The first density comes from `H_core` alone; each sweep rebuilds
/// `H_eff`, solves in the orthogonal basis and mixes
/// `D <- D + c_mix (D_out - D)` until `||D_out - D||_F <= eps_scf`.
pub fn scf_ground_state(
    h_core: &SymmetricMatrix,
    s: Option<&SymmetricMatrix>,
    g: &dyn SelfConsistencyKernel,
    n_occ: usize,
    cfg: &ScfConfig,
) -> Result<ScfState> {
    cfg.validate()?;
    let n = h_core.dim();
    let z = match s {
        Some(s) => {
            check_dims(n, s.dim())?;
            inverse_sqrt_factor(s)?
        }
        None => SymmetricMatrix::identity(n),
    };
    let to_perp = |h: &SymmetricMatrix| congruence_transform(h, &z, Congruence::ToOrthogonal);
    let from_perp = |d: &SymmetricMatrix| congruence_transform(d, &z, Congruence::DensityFromOrthogonal);

    let (d_perp, _, _) = solve_orthogonal(&to_perp(h_core)?, n_occ, cfg)?;
    let mut d_in = from_perp(&d_perp)?;
    let mut residuals = Vec::new();
    for _ in 0..cfg.max_iters {
        let h_eff = h_core + &g.apply(&d_in)?;
        let h_perp = to_perp(&h_eff)?;
        let (d_perp, solver, mu0) = solve_orthogonal(&h_perp, n_occ, cfg)?;
        let d_out = from_perp(&d_perp)?;
        let delta = &d_out - &d_in;
        let r = delta.frobenius_norm();
        residuals.push(r);
        if !r.is_finite() {
            break;
        }
        if r <= cfg.eps_scf || g.is_zero() {
            return Ok(ScfState {
                d: d_out,
                h_eff,
                h_perp,
                z,
                n_occ,
                mu0,
                solver,
                residuals,
            });
        }
        d_in = d_in.lincomb(1.0, &delta, cfg.c_mix)?;
    }
    Err(Error::ScfNoConvergence {
        iterations: residuals.len(),
        residuals,
    })
}

#[derive(Debug, Clone)]
pub struct ScfResponse {
    pub matrix: SymmetricMatrix,
    pub residuals: Vec<f64>,
    /// Chemical-potential response of the final sweep (finite temperature).
    pub mu1: Option<f64>,
}

fn orthogonal_response(state: &ScfState, seed_perp: &SymmetricMatrix) -> Result<(SymmetricMatrix, Option<f64>)> {
    match &state.solver {
        GroundStateSolver::ZeroTemperature(t) => Ok((dm_perturbation_replay(&state.h_perp, seed_perp, t)?, None)),
        GroundStateSolver::FiniteTemperature(th) => {
            let (m, mu1) = th.canonical_derivative(seed_perp)?;
            Ok((m, Some(mu1)))
        }
    }
}

/// Coupled-perturbed loop shared by the density and susceptibility routes:
/// `X_perp = Z^T (seed + G(R)) Z`, `R_new = Z resp(X_perp) Z^T`,
/// `R <- R + c_mix (R_new - R)` until `||R_new - R||_F <= eps_scf`.
fn coupled_response(
    state: &ScfState,
    g: &dyn SelfConsistencyKernel,
    seed: &SymmetricMatrix,
    cfg: &ScfConfig,
) -> Result<ScfResponse> {
    cfg.validate()?;
    check_dims(state.d.dim(), seed.dim())?;
    let z = &state.z;
    let mut r = SymmetricMatrix::zeros(seed.dim());
    let mut residuals = Vec::new();
    for _ in 0..cfg.max_iters {
        let driven = seed + &g.apply(&r)?;
        let perp = congruence_transform(&driven, z, Congruence::ToOrthogonal)?;
        let (resp_perp, mu1) = orthogonal_response(state, &perp)?;
        let r_new = congruence_transform(&resp_perp, z, Congruence::DensityFromOrthogonal)?;
        let delta = &r_new - &r;
        let norm = delta.frobenius_norm();
        residuals.push(norm);
        if !norm.is_finite() {
            break;
        }
        if norm <= cfg.eps_scf || g.is_zero() {
            return Ok(ScfResponse {
                matrix: r_new,
                residuals,
                mu1,
            });
        }
        r = r.lincomb(1.0, &delta, cfg.c_mix)?;
    }
    Err(Error::ScfNoConvergence {
        iterations: residuals.len(),
        residuals,
    })
}

/// Self-consistent first-order density matrix along `h1`.
pub fn scf_dm_response(
    state: &ScfState,
    g: &dyn SelfConsistencyKernel,
    h1: &SymmetricMatrix,
    cfg: &ScfConfig,
) -> Result<ScfResponse> {
    coupled_response(state, g, h1, cfg)
}

/// Self-consistent susceptibility of the observable `a`.
pub fn scf_susceptibility(
    state: &ScfState,
    g: &dyn SelfConsistencyKernel,
    a: &SymmetricMatrix,
    cfg: &ScfConfig,
) -> Result<ScfResponse> {
    coupled_response(state, g, a, cfg)
}
