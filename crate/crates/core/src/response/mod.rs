//! First-order density-matrix response and observable susceptibilities.
//!
//! Two dual routes give the linear response of an expectation value
//! `a = Tr[A D]` to a Hamiltonian perturbation `H1`:
//!
//! * direct: `a1 = Tr[A D1]`, with `D1` the directional derivative of the
//!   density matrix along `H1`;
//! * dual: `a1 = Tr[chi H1]`, with `chi` the susceptibility of `A`.
//!
//! The susceptibility is the same directional derivative taken along `A`, so
//! both come out of the merged SP2 recursion. A backward (adjoint) expansion
//! over the stored `X_n` sequence gives the susceptibility a second way.

mod nonorth;

pub use nonorth::{
    observable_position_derivative, orthogonal_hamiltonian_derivative, z_position_derivative,
    PerpTerm,
};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{check_dims, SpectralBounds, SymmetricMatrix};
use crate::sp2::{expand, DenseAlgebra, Schedule, Sp2Algebra, Sp2Trace, SP2_MAX_ITERATIONS};

/// Ground state plus first-order density matrix.
#[derive(Debug, Clone)]
pub struct DensityResponse {
    pub d0: SymmetricMatrix,
    pub d1: SymmetricMatrix,
    pub trace: Sp2Trace,
}

/// Ground state plus susceptibility of one observable.
#[derive(Debug, Clone)]
pub struct Susceptibility {
    pub d0: SymmetricMatrix,
    pub chi: SymmetricMatrix,
    pub trace: Sp2Trace,
    /// Bytes held by the stored `X_n` sequence (backward route only).
    pub stored_bytes: usize,
}

/// Forward merged recursion with any number of first-order seeds.
///
/// Returns `(D0, [Y_{M+1} per seed], trace)`.
pub fn forward_expansion_with<A: Sp2Algebra>(
    alg: &mut A,
    h0: &A::Mat,
    seeds: &[&A::Mat],
    n_occ: usize,
    bounds: Option<SpectralBounds>,
) -> Result<(A::Mat, Vec<A::Mat>, Sp2Trace)> {
    let e = expand(alg, h0, seeds, Schedule::Decide { n_occ, bounds }, false)?;
    Ok((e.d0, e.responses, e.trace))
}

/// Forward recursion replaying the branch sequence of an earlier ground-state run.
pub fn forward_replay_with<A: Sp2Algebra>(
    alg: &mut A,
    h0: &A::Mat,
    seeds: &[&A::Mat],
    trace: &Sp2Trace,
) -> Result<(A::Mat, Vec<A::Mat>)> {
    let e = expand(alg, h0, seeds, Schedule::Replay(trace), false)?;
    Ok((e.d0, e.responses))
}

/// Density-matrix perturbation `D1` along `h1`, generating `X_n` on the fly.
pub fn dm_perturbation_forward(
    h0: &SymmetricMatrix,
    h1: &SymmetricMatrix,
    n_occ: usize,
) -> Result<DensityResponse> {
    let (d0, mut ys, trace) = forward_expansion_with(&mut DenseAlgebra, h0, &[h1], n_occ, None)?;
    Ok(DensityResponse {
        d0,
        d1: ys.pop().unwrap(),
        trace,
    })
}

/// `D1` along `h1` reusing `alpha`, `beta`, `M` and `{sigma_n}` from `trace`.
pub fn dm_perturbation_replay(
    h0: &SymmetricMatrix,
    h1: &SymmetricMatrix,
    trace: &Sp2Trace,
) -> Result<SymmetricMatrix> {
    let (_, mut ys) = forward_replay_with(&mut DenseAlgebra, h0, &[h1], trace)?;
    Ok(ys.pop().unwrap())
}

/// Susceptibility of `a` by the forward expansion (`Y_1 = beta A`).
pub fn susceptibility_forward(
    h0: &SymmetricMatrix,
    a: &SymmetricMatrix,
    n_occ: usize,
) -> Result<Susceptibility> {
    let (d0, mut ys, trace) = forward_expansion_with(&mut DenseAlgebra, h0, &[a], n_occ, None)?;
    Ok(Susceptibility {
        d0,
        chi: ys.pop().unwrap(),
        trace,
        stored_bytes: 0,
    })
}

pub fn susceptibility_forward_replay(
    h0: &SymmetricMatrix,
    a: &SymmetricMatrix,
    trace: &Sp2Trace,
) -> Result<SymmetricMatrix> {
    dm_perturbation_replay(h0, a, trace)
}

fn sequence_bytes(dim: usize, steps: usize) -> Result<usize> {
    dim.checked_mul(dim)
        .and_then(|v| v.checked_mul(steps))
        .and_then(|v| v.checked_mul(std::mem::size_of::<f64>()))
        .ok_or(Error::Resource { bytes: usize::MAX })
}

/// Backward (adjoint) susceptibility expansion.
///
/// ```text
/// Y_M = A
/// Y_{n-1} = (1 - sigma_n) Y_n + sigma_n (Y_n X_n + X_n Y_n),  n = M..1
/// chi = beta Y_0
/// ```
///
/// Needs the whole `X_1 .. X_M` sequence in memory.
pub fn susceptibility_backward(
    h0: &SymmetricMatrix,
    a: &SymmetricMatrix,
    n_occ: usize,
) -> Result<Susceptibility> {
    backward_with(&mut DenseAlgebra, h0, a, Schedule::Decide { n_occ, bounds: None })
}

/// Backward expansion replaying an earlier ground-state run.
pub fn susceptibility_backward_replay(
    h0: &SymmetricMatrix,
    a: &SymmetricMatrix,
    trace: &Sp2Trace,
) -> Result<Susceptibility> {
    backward_with(&mut DenseAlgebra, h0, a, Schedule::Replay(trace))
}

fn backward_with(
    alg: &mut DenseAlgebra,
    h0: &SymmetricMatrix,
    a: &SymmetricMatrix,
    schedule: Schedule<'_>,
) -> Result<Susceptibility> {
    let steps = match &schedule {
        Schedule::Replay(t) => t.m_steps,
        Schedule::Decide { .. } => SP2_MAX_ITERATIONS,
    };
    sequence_bytes(h0.dim(), steps)?;
    let (d0, chi, trace) = backward_expansion(alg, h0, a, schedule)?;
    let stored_bytes = sequence_bytes(h0.dim(), trace.m_steps)?;
    Ok(Susceptibility {
        d0,
        chi,
        trace,
        stored_bytes,
    })
}

/// Backward susceptibility expansion with any arithmetic backend.
///
/// Returns `(D0, chi, trace)`.
pub fn susceptibility_backward_with<A: Sp2Algebra>(
    alg: &mut A,
    h0: &A::Mat,
    a: &A::Mat,
    n_occ: usize,
) -> Result<(A::Mat, A::Mat, Sp2Trace)> {
    backward_expansion(alg, h0, a, Schedule::Decide { n_occ, bounds: None })
}

fn backward_expansion<A: Sp2Algebra>(
    alg: &mut A,
    h0: &A::Mat,
    a: &A::Mat,
    schedule: Schedule<'_>,
) -> Result<(A::Mat, A::Mat, Sp2Trace)> {
    check_dims(alg.dim(h0), alg.dim(a))?;
    let e = expand(alg, h0, &[], schedule, true)?;
    let mut y = a.clone();
    for (x, sigma) in e.sequence.iter().zip(&e.trace.sigmas).rev() {
        y = alg.response_step(&y, x, f64::from(*sigma))?;
    }
    let chi = alg.scale(&y, e.trace.beta_spec)?;
    Ok((e.d0, chi, e.trace))
}

/// Ground state with optional direct and dual response matrices.
#[derive(Debug, Clone)]
pub struct ResponsePair {
    pub d0: SymmetricMatrix,
    pub d1: Option<SymmetricMatrix>,
    pub chi: Option<SymmetricMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResponseValues {
    pub a0: f64,
    pub a1_direct: Option<f64>,
    pub a1_dual: Option<f64>,
}

impl ResponseValues {
    /// `|direct - dual| / max(|direct|, 1e-12)` when both routes are present.
    pub fn relative_duality_deviation(&self) -> Option<f64> {
        match (self.a1_direct, self.a1_dual) {
            (Some(d), Some(s)) => Some((d - s).abs() / d.abs().max(1e-12)),
            _ => None,
        }
    }
}

/// `a0 = Tr[A D0]`, `a1_direct = Tr[A D1]`, `a1_dual = Tr[chi H1]`.
pub fn linear_response_value(
    a: &SymmetricMatrix,
    h1: &SymmetricMatrix,
    pair: &ResponsePair,
) -> Result<ResponseValues> {
    check_dims(pair.d0.dim(), a.dim())?;
    check_dims(pair.d0.dim(), h1.dim())?;
    if pair.d1.is_none() && pair.chi.is_none() {
        return Err(Error::InvalidArgument(
            "need a density-matrix response or a susceptibility".into(),
        ));
    }
    Ok(ResponseValues {
        a0: a.trace_product(&pair.d0),
        a1_direct: pair.d1.as_ref().map(|d1| a.trace_product(d1)),
        a1_dual: pair.chi.as_ref().map(|chi| chi.trace_product(h1)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sym_eigendecompose, Matrix};
    use crate::models::{gapped_random, random_symmetric};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sx() -> SymmetricMatrix {
        SymmetricMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn worked_d1() -> SymmetricMatrix {
        SymmetricMatrix::from_rows(&[vec![0.0, -0.5], vec![-0.5, 0.0]]).unwrap()
    }

    #[test]
    fn commuting_perturbation_has_no_response() {
        let h0 = SymmetricMatrix::from_diagonal(&[0.0, 2.0]);
        let h1 = SymmetricMatrix::from_diagonal(&[0.3, 0.7]);
        let r = dm_perturbation_forward(&h0, &h1, 1).unwrap();
        assert!(r.d1.frobenius_norm() < 1e-14, "{:?} {:?}", r.d1, r.trace);
    }

    #[test]
    fn worked_two_level_case() {
        let h0 = SymmetricMatrix::from_diagonal(&[0.0, 2.0]);
        let r = dm_perturbation_forward(&h0, &sx(), 1).unwrap();
        assert!(r.d1.distance(&worked_d1()) < 1e-12);
        let f = susceptibility_forward(&h0, &sx(), 1).unwrap();
        assert!(f.chi.distance(&worked_d1()) < 1e-12);
        let b = susceptibility_backward(&h0, &sx(), 1).unwrap();
        assert!(b.chi.distance(&worked_d1()) < 1e-12);
        assert_eq!(b.stored_bytes, b.trace.m_steps * 4 * 8);

        let pair = ResponsePair {
            d0: r.d0.clone(),
            d1: Some(r.d1),
            chi: Some(f.chi),
        };
        let v = linear_response_value(&sx(), &sx(), &pair).unwrap();
        assert!((v.a1_direct.unwrap() + 1.0).abs() < 1e-12);
        assert!((v.a1_dual.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_observable_has_zero_susceptibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h0 = gapped_random(20, 8, 1.0, 2.0, &mut rng).unwrap();
        let id = SymmetricMatrix::identity(20);
        let f = susceptibility_forward(&h0, &id, 8).unwrap();
        assert!(f.chi.frobenius_norm() <= 1e-9 * 20.0);
        let b = susceptibility_backward(&h0, &id, 8).unwrap();
        assert!(b.chi.frobenius_norm() <= 1e-9 * 20.0);
    }

    #[test]
    fn commuting_observable_has_zero_susceptibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h0 = gapped_random(16, 6, 1.0, 2.0, &mut rng).unwrap();
        let e = sym_eigendecompose(&h0).unwrap();
        let a = e.reconstruct_with(|l| l.powi(3) - 0.3 * l).unwrap();
        let f = susceptibility_forward(&h0, &a, 6).unwrap();
        assert!(f.chi.frobenius_norm() < 1e-9);
    }

    #[test]
    fn forward_and_backward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h0 = gapped_random(30, 13, 1.0, 2.0, &mut rng).unwrap();
        let a = random_symmetric(30, &mut rng);
        let f = susceptibility_forward(&h0, &a, 13).unwrap();
        let b = susceptibility_backward(&h0, &a, 13).unwrap();
        assert_eq!(f.trace, b.trace);
        assert!(f.chi.distance(&b.chi) <= 1e-9 * f.chi.frobenius_norm().max(1.0));
        let replayed = susceptibility_backward_replay(&h0, &a, &f.trace).unwrap();
        assert_eq!(replayed.chi, b.chi);
    }

    #[test]
    fn duality_on_random_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h0 = gapped_random(30, 15, 1.0, 2.0, &mut rng).unwrap();
        let a = random_symmetric(30, &mut rng);
        let chi = susceptibility_forward(&h0, &a, 15).unwrap();
        for _ in 0..5 {
            let h1 = random_symmetric(30, &mut rng);
            let d1 = dm_perturbation_replay(&h0, &h1, &chi.trace).unwrap();
            let direct = a.trace_product(&d1);
            let dual = chi.chi.trace_product(&h1);
            assert!((direct - dual).abs() <= 1e-10 * direct.abs().max(1e-12));
        }
    }

    #[test]
    fn response_is_linear_in_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h0 = gapped_random(24, 10, 1.0, 2.0, &mut rng).unwrap();
        let p = random_symmetric(24, &mut rng);
        let q = random_symmetric(24, &mut rng);
        let (_, t) = crate::sp2::sp2_ground_state(&h0, 10, None).unwrap();
        let combo = p.lincomb(0.7, &q, -1.3).unwrap();
        let lhs = dm_perturbation_replay(&h0, &combo, &t).unwrap();
        let rhs = dm_perturbation_replay(&h0, &p, &t)
            .unwrap()
            .lincomb(0.7, &dm_perturbation_replay(&h0, &q, &t).unwrap(), -1.3)
            .unwrap();
        assert!(lhs.distance(&rhs) <= 1e-10 * lhs.frobenius_norm());
    }

    #[test]
    fn replay_matches_fresh_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h0 = gapped_random(20, 9, 1.0, 2.0, &mut rng).unwrap();
        let h1 = random_symmetric(20, &mut rng);
        let fresh = dm_perturbation_forward(&h0, &h1, 9).unwrap();
        let replay = dm_perturbation_replay(&h0, &h1, &fresh.trace).unwrap();
        assert_eq!(fresh.d1, replay);
    }

    #[test]
    fn replay_rejects_mismatched_dimension() {
        let h0 = SymmetricMatrix::from_diagonal(&[0.0, 2.0]);
        let r = dm_perturbation_forward(&h0, &sx(), 1).unwrap();
        let big = SymmetricMatrix::identity(3);
        assert!(dm_perturbation_replay(&big, &big, &r.trace).is_err());
        assert!(dm_perturbation_forward(&h0, &big, 1).is_err());
    }

    #[test]
    fn response_values_edge_cases() {
        let h0 = SymmetricMatrix::from_diagonal(&[0.0, 2.0]);
        let r = dm_perturbation_forward(&h0, &sx(), 1).unwrap();
        let zero = SymmetricMatrix::zeros(2);
        let pair = ResponsePair {
            d0: r.d0.clone(),
            d1: Some(r.d1.clone()),
            chi: Some(r.d1.clone()),
        };
        let v = linear_response_value(&zero, &sx(), &pair).unwrap();
        assert_eq!((v.a0, v.a1_direct), (0.0, Some(0.0)));
        let v = linear_response_value(&sx(), &zero, &pair).unwrap();
        assert_eq!(v.a1_dual, Some(0.0));
        let empty = ResponsePair {
            d0: r.d0,
            d1: None,
            chi: None,
        };
        assert!(linear_response_value(&sx(), &sx(), &empty).is_err());
    }

    #[test]
    fn sequence_size_overflow_is_a_resource_error() {
        assert!(matches!(
            sequence_bytes(usize::MAX / 2, 3),
            Err(Error::Resource { .. })
        ));
        let _ = Matrix::zeros(1, 1);
    }
}
