//! Second-order spectral projection (SP2) expansion of the zero-temperature
//! density matrix.
//!
//! The recursion
//!
//! ```text
//! X_1     = alpha I + beta H
//! X_{n+1} = (1 - sigma_n) X_n + sigma_n X_n^2
//! D       = X_{M+1}
//! ```
//!
//! maps the spectrum of `H` in reverse order onto `[0, 1]` and then drives
//! every eigenvalue to 0 or 1. The branch `sigma_n = ±1` is chosen so that
//! `Tr[X_{n+1}]` is as close as possible to the occupation target.
//!
//! First-order responses ride along the same recursion:
//!
//! ```text
//! Y_{n+1} = (1 - sigma_n) Y_n + sigma_n (Y_n X_n + X_n Y_n)
//! ```
//!
//! [`Sp2Algebra`] abstracts the matrix arithmetic so that the same driver
//! runs with dense double precision, thresholded sparse matrices, or emulated
//! low-precision products.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gershgorin_bounds, SpectralBounds, SymmetricMatrix};

/// Hard cap on the number of SP2 steps.
pub const SP2_MAX_ITERATIONS: usize = 120;
/// Stop once `|Tr[X^2 - X]| <= 1e-15 * N`.
pub const SP2_FLOOR: f64 = 1e-15;
/// The "stopped decreasing" rule only fires below `1e-3 * N`, which keeps it
/// out of the pre-asymptotic phase where the error may grow.
pub const SP2_STALL_GUARD: f64 = 1e-3;

/// Matrix arithmetic used by the SP2 recursion and its response expansions.
pub trait Sp2Algebra {
    type Mat: Clone;

    fn dim(&self, x: &Self::Mat) -> usize;
    fn bounds(&self, h: &Self::Mat) -> SpectralBounds;
    /// `alpha I + beta H`.
    fn initial(&mut self, h: &Self::Mat, alpha: f64, beta: f64) -> Result<Self::Mat>;
    fn scale(&mut self, x: &Self::Mat, s: f64) -> Result<Self::Mat>;
    fn square(&mut self, x: &Self::Mat) -> Result<Self::Mat>;
    fn trace(&self, x: &Self::Mat) -> f64;
    /// `(1 - sigma) X + sigma X2`.
    fn projection_step(&mut self, x: &Self::Mat, x2: &Self::Mat, sigma: f64) -> Result<Self::Mat>;
    /// `(1 - sigma) Y + sigma (Y X + X Y)`.
    fn response_step(&mut self, y: &Self::Mat, x: &Self::Mat, sigma: f64) -> Result<Self::Mat>;
}

/// Plain double-precision dense arithmetic.
#[derive(Debug, Default, Clone, Copy)]
pub struct DenseAlgebra;

impl Sp2Algebra for DenseAlgebra {
    type Mat = SymmetricMatrix;

    fn dim(&self, x: &SymmetricMatrix) -> usize {
        x.dim()
    }

    fn bounds(&self, h: &SymmetricMatrix) -> SpectralBounds {
        gershgorin_bounds(h)
    }

    fn initial(&mut self, h: &SymmetricMatrix, alpha: f64, beta: f64) -> Result<SymmetricMatrix> {
        Ok(h.affine(alpha, beta))
    }

    fn scale(&mut self, x: &SymmetricMatrix, s: f64) -> Result<SymmetricMatrix> {
        Ok(x.scaled(s))
    }

    fn square(&mut self, x: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        Ok(x.square())
    }

    fn trace(&self, x: &SymmetricMatrix) -> f64 {
        x.trace()
    }

    fn projection_step(&mut self, x: &SymmetricMatrix, x2: &SymmetricMatrix, sigma: f64) -> Result<SymmetricMatrix> {
        x.lincomb(1.0 - sigma, x2, sigma)
    }

    fn response_step(&mut self, y: &SymmetricMatrix, x: &SymmetricMatrix, sigma: f64) -> Result<SymmetricMatrix> {
        let anti = SymmetricMatrix::from_sum_with_transpose(&y.matmul(x));
        y.lincomb(1.0 - sigma, &anti, sigma)
    }
}

/// Record of one ground-state expansion. Response runs replay it to reuse
/// exactly the same `alpha`, `beta`, `M` and branch sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sp2Trace {
    pub alpha: f64,
    pub beta_spec: f64,
    pub sigmas: Vec<i8>,
    pub m_steps: usize,
    /// `|Tr[X_n^2 - X_n]|` before each applied step.
    pub idempotency_log: Vec<f64>,
    pub bounds: SpectralBounds,
    pub n_occ: usize,
    pub dim: usize,
}

impl Sp2Trace {
    /// The last `k` idempotency errors.
    pub fn idempotency_tail(&self, k: usize) -> &[f64] {
        let start = self.idempotency_log.len().saturating_sub(k);
        &self.idempotency_log[start..]
    }
}

/// Scalars of the reversing initial transform.
pub fn initial_transform(bounds: &SpectralBounds) -> (f64, f64) {
    let width = bounds.eps_max - bounds.eps_min;
    (bounds.eps_max / width, -1.0 / width)
}

/// Branch choice: the branch whose trace lands closer to `n_occ`, `+1` on ties.
pub fn choose_sigma(trace_x: f64, trace_x2: f64, n_occ: f64) -> i8 {
    let plus = (trace_x2 - n_occ).abs();
    let minus = (2.0 * trace_x - trace_x2 - n_occ).abs();
    if minus < plus {
        -1
    } else {
        1
    }
}

fn should_stop(log: &[f64], dim: usize) -> bool {
    let n = log.len();
    let e = log[n - 1];
    if e <= SP2_FLOOR * dim as f64 {
        return true;
    }
    n >= 3 && e >= log[n - 3] && e <= SP2_STALL_GUARD * dim as f64
}

/// Relative widening applied to default (Gershgorin) bounds.
///
/// Bounds that touch the spectrum map extreme eigenvalues exactly onto 0 or
/// 1, where the expansion can stop before the response has converged.
pub const DEFAULT_BOUNDS_PAD: f64 = 1e-2;

fn padded(b: SpectralBounds) -> SpectralBounds {
    let pad = DEFAULT_BOUNDS_PAD * b.width();
    SpectralBounds {
        eps_min: b.eps_min - pad,
        eps_max: b.eps_max + pad,
    }
}

pub(crate) enum Schedule<'a> {
    Decide {
        n_occ: usize,
        bounds: Option<SpectralBounds>,
    },
    Replay(&'a Sp2Trace),
}

pub(crate) struct Expansion<M> {
    pub d0: M,
    pub responses: Vec<M>,
    pub trace: Sp2Trace,
    /// `X_1 .. X_M` when requested.
    pub sequence: Vec<M>,
}

pub(crate) fn check_occupation(n_occ: usize, dim: usize) -> Result<()> {
    if n_occ < 1 || n_occ + 1 > dim {
        return Err(Error::InvalidOccupation {
            n_occ: n_occ as f64,
            dim,
        });
    }
    Ok(())
}

/// Merged ground-state and response recursion.
///
/// `seeds` are the unscaled first-order inputs; `Y_1 = beta * seed`. The
/// `X_n` sequence is generated on the fly and only retained when
/// `keep_sequence` is set.
pub(crate) fn expand<A: Sp2Algebra>(
    alg: &mut A,
    h0: &A::Mat,
    seeds: &[&A::Mat],
    schedule: Schedule<'_>,
    keep_sequence: bool,
) -> Result<Expansion<A::Mat>> {
    let dim = alg.dim(h0);
    for s in seeds {
        crate::linalg::check_dims(dim, alg.dim(s))?;
    }
    let (bounds, n_occ, replay) = match schedule {
        Schedule::Decide { n_occ, bounds } => {
            check_occupation(n_occ, dim)?;
            let b = match bounds {
                Some(b) => b,
                None => padded(alg.bounds(h0)),
            };
            (b, n_occ, None)
        }
        Schedule::Replay(trace) => {
            crate::linalg::check_dims(trace.dim, dim)?;
            (trace.bounds, trace.n_occ, Some(trace))
        }
    };
    let (alpha, beta) = match replay {
        Some(t) => (t.alpha, t.beta_spec),
        None => initial_transform(&bounds),
    };

    let mut x = alg.initial(h0, alpha, beta)?;
    let mut ys = seeds
        .iter()
        .map(|s| alg.scale(s, beta))
        .collect::<Result<Vec<_>>>()?;
    let mut sigmas = Vec::new();
    let mut log = Vec::new();
    let mut sequence = Vec::new();

    let steps = replay.map_or(SP2_MAX_ITERATIONS, |t| t.m_steps);
    let mut converged = replay.is_some();
    for n in 0..steps {
        let x2 = alg.square(&x)?;
        let sigma = match replay {
            Some(t) => t.sigmas[n],
            None => {
                let tx = alg.trace(&x);
                let tx2 = alg.trace(&x2);
                log.push((tx - tx2).abs());
                choose_sigma(tx, tx2, n_occ as f64)
            }
        };
        let s = f64::from(sigma);
        for y in ys.iter_mut() {
            *y = alg.response_step(y, &x, s)?;
        }
        let next = alg.projection_step(&x, &x2, s)?;
        if keep_sequence {
            sequence.push(std::mem::replace(&mut x, next));
        } else {
            x = next;
        }
        sigmas.push(sigma);
        if replay.is_none() && should_stop(&log, dim) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Sp2NoConvergence {
            iterations: SP2_MAX_ITERATIONS,
            idempotency_log: log,
        });
    }

    let trace = match replay {
        Some(t) => t.clone(),
        None => Sp2Trace {
            alpha,
            beta_spec: beta,
            m_steps: sigmas.len(),
            sigmas,
            idempotency_log: log,
            bounds,
            n_occ,
            dim,
        },
    };
    Ok(Expansion {
        d0: x,
        responses: ys,
        trace,
        sequence,
    })
}

/// Ground-state density matrix of `h0` with `n_occ` occupied states.
///
/// Bounds default to slightly widened Gershgorin discs.
pub fn sp2_ground_state(
    h0: &SymmetricMatrix,
    n_occ: usize,
    bounds: Option<SpectralBounds>,
) -> Result<(SymmetricMatrix, Sp2Trace)> {
    sp2_ground_state_with(&mut DenseAlgebra, h0, n_occ, bounds)
}

/// Ground state with an arbitrary arithmetic backend.
pub fn sp2_ground_state_with<A: Sp2Algebra>(
    alg: &mut A,
    h0: &A::Mat,
    n_occ: usize,
    bounds: Option<SpectralBounds>,
) -> Result<(A::Mat, Sp2Trace)> {
    let e = expand(alg, h0, &[], Schedule::Decide { n_occ, bounds }, false)?;
    Ok((e.d0, e.trace))
}
