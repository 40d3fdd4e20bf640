//! Reference computations that do not go through the SP2 recursion:
//! central finite differences, exact eigenbasis projector derivatives, and
//! a tridiagonal eigen-solver for long chains.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{check_dims, sym_eigendecompose, EigenDecomposition, Matrix, SymmetricMatrix};
use crate::response::{dm_perturbation_replay, susceptibility_backward_replay, susceptibility_forward};
use crate::thermal::ThermalState;

/// Default step for double-precision central differences.
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Eigenvalues closer than this to the Fermi level count as gapless.
pub const GAPLESS_TOLERANCE: f64 = 1e-8;

/// `(D(H0 + h dir) - D(H0 - h dir)) / (2h)`.
pub fn finite_difference_response<F>(
    builder: F,
    h0: &SymmetricMatrix,
    direction: &SymmetricMatrix,
    h: f64,
) -> Result<SymmetricMatrix>
where
    F: Fn(&SymmetricMatrix) -> Result<SymmetricMatrix>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let plus = builder(&h0.lincomb(1.0, direction, h)?)?;
    let minus = builder(&h0.lincomb(1.0, direction, -h)?)?;
    plus.lincomb(0.5 / h, &minus, -0.5 / h)
}

/// Midpoint between eigenvalues `n_occ - 1` and `n_occ` (ascending, 0-based).
pub fn fermi_level(eig: &EigenDecomposition, n_occ: usize) -> Result<f64> {
    let n = eig.dim();
    if n_occ < 1 || n_occ >= n {
        return Err(Error::InvalidOccupation {
            n_occ: n_occ as f64,
            dim: n,
        });
    }
    Ok(0.5 * (eig.values[n_occ - 1] + eig.values[n_occ]))
}

/// Spectral projector onto the `n_occ` lowest eigenvectors.
pub fn projector_oracle(h: &SymmetricMatrix, n_occ: usize) -> Result<SymmetricMatrix> {
    let eig = sym_eigendecompose(h)?;
    let mu = fermi_level(&eig, n_occ)?;
    eig.reconstruct_with(|l| if l < mu { 1.0 } else { 0.0 })
}

/// Exact derivative of the projector `theta(mu - H)` along `direction`.
pub fn projector_derivative_exact(
    eig: &EigenDecomposition,
    direction: &SymmetricMatrix,
    mu: f64,
) -> Result<SymmetricMatrix> {
    check_dims(eig.dim(), direction.dim())?;
    if let Some(&l) = eig.values.iter().find(|l| (*l - mu).abs() <= GAPLESS_TOLERANCE) {
        return Err(Error::Gapless { eigenvalue: l, mu });
    }
    let occ: Vec<bool> = eig.values.iter().map(|&l| l < mu).collect();
    let n = eig.dim();
    let mut inner = eig.to_eigenbasis(direction.as_matrix());
    for i in 0..n {
        for j in 0..n {
            inner[(i, j)] *= if occ[i] == occ[j] {
                0.0
            } else {
                let (ti, tj) = (f64::from(u8::from(occ[i])), f64::from(u8::from(occ[j])));
                (ti - tj) / (eig.values[i] - eig.values[j])
            };
        }
    }
    Ok(SymmetricMatrix::symmetrize(eig.from_eigenbasis(&inner)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThermalAudit {
    pub beta_t: f64,
    pub direct: f64,
    pub dual: f64,
    pub relative_deviation: f64,
}

/// The same first-order response computed four ways.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub a0: f64,
    /// `Tr[A D1]` with `D1` from the recursion.
    pub direct: f64,
    /// `Tr[chi H1]` with `chi` from the forward expansion.
    pub dual_forward: f64,
    /// `Tr[chi H1]` with `chi` from the backward expansion.
    pub dual_backward: f64,
    /// `Tr[A D1]` with the exact eigenbasis derivative.
    pub oracle: f64,
    pub max_relative_deviation: f64,
    pub m_steps: usize,
    pub thermal: Option<ThermalAudit>,
}

impl DualityReport {
    pub fn values(&self) -> [f64; 4] {
        [self.direct, self.dual_forward, self.dual_backward, self.oracle]
    }
}

/// `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn relative_deviation(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

pub fn max_pairwise_deviation(values: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            worst = worst.max(relative_deviation(*a, *b));
        }
    }
    worst
}

pub fn duality_audit(
    h0: &SymmetricMatrix,
    a: &SymmetricMatrix,
    h1: &SymmetricMatrix,
    n_occ: usize,
    beta_t: Option<f64>,
) -> Result<DualityReport> {
    check_dims(h0.dim(), a.dim())?;
    check_dims(h0.dim(), h1.dim())?;
    let fwd = susceptibility_forward(h0, a, n_occ)?;
    let bwd = susceptibility_backward_replay(h0, a, &fwd.trace)?;
    let d1 = dm_perturbation_replay(h0, h1, &fwd.trace)?;
    let eig = sym_eigendecompose(h0)?;
    let mu = fermi_level(&eig, n_occ)?;
    let exact = projector_derivative_exact(&eig, h1, mu)?;

    let direct = a.trace_product(&d1);
    let dual_forward = fwd.chi.trace_product(h1);
    let dual_backward = bwd.chi.trace_product(h1);
    let oracle = a.trace_product(&exact);
    let thermal = match beta_t {
        None => None,
        Some(b) => {
            let state = ThermalState::from_eigen(eig, b, n_occ as f64)?;
            let (chi_t, _) = state.canonical_derivative(a)?;
            let (d1_t, _) = state.canonical_derivative(h1)?;
            let direct = a.trace_product(&d1_t);
            let dual = chi_t.trace_product(h1);
            Some(ThermalAudit {
                beta_t: b,
                direct,
                dual,
                relative_deviation: relative_deviation(direct, dual),
            })
        }
    };
    Ok(DualityReport {
        a0: a.trace_product(&fwd.d0),
        direct,
        dual_forward,
        dual_backward,
        oracle,
        max_relative_deviation: max_pairwise_deviation(&[direct, dual_forward, dual_backward, oracle]),
        m_steps: fwd.trace.m_steps,
        thermal,
    })
}

/// Number of eigenvalues of the symmetric tridiagonal `(d, e)` below `x`.
fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0f64;
    for i in 0..d.len() {
        let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] };
        q = d[i] - x - if i == 0 { 0.0 } else { off / q };
        if q == 0.0 {
            q = f64::EPSILON * (d[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Ascending eigenvalues of a symmetric tridiagonal matrix by Sturm bisection.
pub fn tridiagonal_eigenvalues(d: &[f64], e: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(1.0);
    (0..n)
        .map(|k| {
            let (mut a, mut b) = (lo - scale * 1e-12, hi + scale * 1e-12);
            while b - a > 2.0 * f64::EPSILON * scale {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if sturm_count(d, e, mid) > k {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            0.5 * (a + b)
        })
        .collect()
}

/// Unit eigenvector for `lambda` by inverse iteration with a partially
/// pivoted tridiagonal LU factorization.
pub fn tridiagonal_eigenvector(d: &[f64], e: &[f64], lambda: f64) -> Vec<f64> {
    let n = d.len();
    let scale = d.iter().chain(e).fold(1.0f64, |m, v| m.max(v.abs()));
    let tiny = f64::EPSILON * scale;
    // rows of U hold (u0, u1, u2) = diagonal and two super-diagonals
    let mut u = vec![[0.0f64; 3]; n];
    let mut l = vec![0.0f64; n];
    let mut swapped = vec![false; n];
    let mut cur = [d[0] - lambda, if n > 1 { e[0] } else { 0.0 }, 0.0];
    for i in 0..n {
        if i + 1 == n {
            u[i] = cur;
            break;
        }
        let below = [e[i], d[i + 1] - lambda, if i + 2 < n { e[i + 1] } else { 0.0 }];
        let (pivot, other) = if below[0].abs() > cur[0].abs() {
            swapped[i] = true;
            (below, [cur[1], cur[2], 0.0])
        } else {
            (cur, [below[1], below[2], 0.0])
        };
        let p0 = if pivot[0] == 0.0 { tiny } else { pivot[0] };
        let m = if swapped[i] { cur[0] / p0 } else { below[0] / p0 };
        u[i] = [p0, pivot[1], pivot[2]];
        l[i] = m;
        cur = [other[0] - m * pivot[1], other[1] - m * pivot[2], 0.0];
    }
    if u[n - 1][0] == 0.0 {
        u[n - 1][0] = tiny;
    }
    let mut x = vec![1.0f64; n];
    for _ in 0..3 {
        // forward elimination with the recorded row swaps
        for i in 0..n.saturating_sub(1) {
            if swapped[i] {
                x.swap(i, i + 1);
            }
            x[i + 1] -= l[i] * x[i];
        }
        for i in (0..n).rev() {
            let mut v = x[i];
            if i + 1 < n {
                v -= u[i][1] * x[i + 1];
            }
            if i + 2 < n {
                v -= u[i][2] * x[i + 2];
            }
            x[i] = v / u[i][0];
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
    x
}

/// Ground-state expectation value and first-order response on a
/// tridiagonal Hamiltonian, for an observable and a perturbation supported
/// on the window `offset .. offset + w`.
///
/// `a1 = sum_{i occ, j virt} 2 <i|A|j><j|H1|i> / (l_i - l_j)`; only the
/// window components of each eigenvector are kept, so the cost is
/// `O(N^2 w)` time and `O(N w)` memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainOracleValues {
    pub a0: f64,
    pub a1: f64,
    pub homo_lumo_gap: f64,
}

pub fn tridiagonal_response_oracle(
    d: &[f64],
    e: &[f64],
    n_occ: usize,
    offset: usize,
    a: &SymmetricMatrix,
    h1: &SymmetricMatrix,
) -> Result<ChainOracleValues> {
    let n = d.len();
    let w = a.dim();
    check_dims(w, h1.dim())?;
    if e.len() + 1 != n || offset + w > n {
        return Err(Error::InvalidArgument("window or off-diagonal length out of range".into()));
    }
    if n_occ < 1 || n_occ >= n {
        return Err(Error::InvalidOccupation {
            n_occ: n_occ as f64,
            dim: n,
        });
    }
    let values = tridiagonal_eigenvalues(d, e);
    // window restriction of eigenvector k is column k of `u` (w x n)
    let mut u = Matrix::zeros(w, n);
    for (k, &lam) in values.iter().enumerate() {
        let v = tridiagonal_eigenvector(d, e, lam);
        for r in 0..w {
            u[(r, k)] = v[offset + r];
        }
    }
    let au = a.as_matrix() * &u;
    let hu = h1.as_matrix() * &u;
    let mut a0 = 0.0;
    let mut a1 = 0.0;
    for i in 0..n_occ {
        let ui = u.column(i);
        a0 += ui.dot(&au.column(i));
        let a_row = au.tr_mul(&ui);
        let h_row = hu.tr_mul(&ui);
        for j in n_occ..n {
            a1 += 2.0 * a_row[j] * h_row[j] / (values[i] - values[j]);
        }
    }
    Ok(ChainOracleValues {
        a0,
        a1,
        homo_lumo_gap: values[n_occ] - values[n_occ - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::apply_matrix_function;
    use crate::models::{chain_hamiltonian, chain_tridiagonal, gapped_random, random_symmetric};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sx() -> SymmetricMatrix {
        SymmetricMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn finite_difference_of_linear_and_square_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h0 = random_symmetric(6, &mut rng);
        let v = random_symmetric(6, &mut rng);
        let id = finite_difference_response(|x| Ok(x.clone()), &h0, &v, 1e-3).unwrap();
        assert!(id.distance(&v) < 1e-12);
        let sq = finite_difference_response(|x| Ok(x.square()), &h0, &v, 1e-3).unwrap();
        let exact = SymmetricMatrix::from_sum_with_transpose(&h0.matmul(&v));
        // the central difference of a quadratic map is exact up to rounding
        assert!(sq.distance(&exact) < 1e-9 * v.frobenius_norm());
        assert!(finite_difference_response(|x| Ok(x.clone()), &h0, &v, 0.0).is_err());
    }

    #[test]
    fn two_level_worked_case() {
        let h0 = SymmetricMatrix::from_diagonal(&[0.0, 2.0]);
        let expected = SymmetricMatrix::from_rows(&[vec![0.0, -0.5], vec![-0.5, 0.0]]).unwrap();
        let fd = finite_difference_response(|h| projector_oracle(h, 1), &h0, &sx(), 1e-5).unwrap();
        assert!(fd.distance(&expected) < 1e-9);
        let eig = sym_eigendecompose(&h0).unwrap();
        let exact = projector_derivative_exact(&eig, &sx(), 1.0).unwrap();
        assert!(exact.distance(&expected) < 1e-15);
        assert!(matches!(
            projector_derivative_exact(&eig, &sx(), 2.0),
            Err(Error::Gapless { .. })
        ));
    }

    #[test]
    fn commuting_direction_has_zero_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = gapped_random(12, 5, 1.0, 2.0, &mut rng).unwrap();
        let eig = sym_eigendecompose(&h).unwrap();
        let dir = apply_matrix_function(&h, |l| l * l).unwrap();
        let d = projector_derivative_exact(&eig, &dir, fermi_level(&eig, 5).unwrap()).unwrap();
        assert!(d.frobenius_norm() < 1e-12);
    }

    #[test]
    fn three_way_cross_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h0 = gapped_random(40, 17, 1.0, 2.0, &mut rng).unwrap();
        let h1 = random_symmetric(40, &mut rng);
        let eig = sym_eigendecompose(&h0).unwrap();
        let exact = projector_derivative_exact(&eig, &h1, fermi_level(&eig, 17).unwrap()).unwrap();
        let fd = finite_difference_response(|h| projector_oracle(h, 17), &h0, &h1, 1e-5).unwrap();
        assert!(exact.distance(&fd) <= 1e-6);
        let rec = crate::response::dm_perturbation_forward(&h0, &h1, 17).unwrap().d1;
        assert!(exact.distance(&rec) <= 1e-7);
    }

    #[test]
    fn audit_examples() {
        let h0 = SymmetricMatrix::from_diagonal(&[0.0, 2.0]);
        let r = duality_audit(&h0, &sx(), &sx(), 1, Some(50.0)).unwrap();
        for v in r.values() {
            assert!((v + 1.0).abs() < 1e-10, "{r:?}");
        }
        let zero = SymmetricMatrix::zeros(2);
        let r = duality_audit(&h0, &zero, &sx(), 1, None).unwrap();
        assert_eq!(r.values(), [0.0; 4]);
        assert_eq!(r.max_relative_deviation, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h0 = gapped_random(50, 25, 1.0, 2.0, &mut rng).unwrap();
        let a = random_symmetric(50, &mut rng);
        let h1 = random_symmetric(50, &mut rng);
        let r = duality_audit(&h0, &a, &h1, 25, Some(20.0)).unwrap();
        assert!(r.max_relative_deviation <= 1e-9, "{r:?}");
        assert!(r.thermal.unwrap().relative_deviation <= 1e-9);
    }

    #[test]
    fn tridiagonal_oracle_matches_dense_eigensolver() {
        let n = 60;
        let (d, e) = chain_tridiagonal(n, 1.0);
        let vals = tridiagonal_eigenvalues(&d, &e);
        let dense = sym_eigendecompose(&chain_hamiltonian(n, 1.0)).unwrap();
        for (a, b) in vals.iter().zip(&dense.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let v = tridiagonal_eigenvector(&d, &e, vals[7]);
        let dv = dense.vectors.column(7);
        let overlap: f64 = v.iter().zip(dv.iter()).map(|(a, b)| a * b).sum();
        assert!((overlap.abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn tridiagonal_response_matches_dense_oracle() {
        let n = 80;
        let (d, e) = chain_tridiagonal(n, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (offset, w) = (30, 8);
        let a_w = random_symmetric(w, &mut rng);
        let h_w = random_symmetric(w, &mut rng);
        let embed = |m: &SymmetricMatrix| {
            SymmetricMatrix::from_fn(n, |i, j| {
                if (offset..offset + w).contains(&i) && (offset..offset + w).contains(&j) {
                    m.get(i - offset, j - offset)
                } else {
                    0.0
                }
            })
        };
        let (a, h1) = (embed(&a_w), embed(&h_w));
        let h0 = chain_hamiltonian(n, 1.0);
        let eig = sym_eigendecompose(&h0).unwrap();
        let mu = fermi_level(&eig, n / 2).unwrap();
        let exact = projector_derivative_exact(&eig, &h1, mu).unwrap();
        let d0 = projector_oracle(&h0, n / 2).unwrap();
        let o = tridiagonal_response_oracle(&d, &e, n / 2, offset, &a_w, &h_w).unwrap();
        assert!((o.a1 - a.trace_product(&exact)).abs() < 1e-10);
        assert!((o.a0 - a.trace_product(&d0)).abs() < 1e-10);
    }
}
