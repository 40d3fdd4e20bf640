//! Position derivatives in non-orthogonal representations.
//!
//! With an inverse factor `Z^T S Z = I`, operators map to the orthonormal
//! basis as `X_perp = Z^T X Z` and densities back as `D = Z D_perp Z^T`.

use crate::error::Result;
use crate::linalg::{check_dims, trace_of_product, Matrix, SymmetricMatrix};

/// `Z_tau = -(1/2) S^{-1} S_tau Z`.
///
/// This is one valid derivative of the inverse factor: it satisfies the
/// differentiated constraint `Z_tau^T S Z + Z^T S_tau Z + Z^T S Z_tau = 0`
/// but in general differs from the derivative of the Löwdin factor by `Z K`
/// with `K` antisymmetric. Observables are unaffected as long as the same
/// `Z_tau` is used consistently.
pub fn z_position_derivative(
    s_inv: &SymmetricMatrix,
    s_tau: &SymmetricMatrix,
    z: &SymmetricMatrix,
) -> Result<Matrix> {
    check_dims(s_inv.dim(), s_tau.dim())?;
    check_dims(s_inv.dim(), z.dim())?;
    Ok(s_inv.as_matrix() * s_tau.as_matrix() * z.as_matrix() * -0.5)
}

/// `H_tau_perp = Z_tau^T H Z + Z^T H_tau Z + Z^T H Z_tau`.
pub fn orthogonal_hamiltonian_derivative(
    h: &SymmetricMatrix,
    h_tau: &SymmetricMatrix,
    z: &SymmetricMatrix,
    z_tau: &Matrix,
) -> Result<SymmetricMatrix> {
    check_dims(h.dim(), h_tau.dim())?;
    check_dims(h.dim(), z.dim())?;
    check_dims(h.dim(), z_tau.nrows())?;
    check_dims(h.dim(), z_tau.ncols())?;
    let zm = z.as_matrix();
    let hm = h.as_matrix();
    let cross = z_tau.transpose() * hm * zm;
    let total = &cross + cross.transpose() + zm.transpose() * h_tau.as_matrix() * zm;
    Ok(SymmetricMatrix::symmetrize(total))
}

/// The orthonormal-basis term `Tr[A_perp D_perp_tau]`, either given directly
/// or through the susceptibility `Tr[chi^{A_perp} H_tau_perp]`.
#[derive(Debug, Clone, Copy)]
pub enum PerpTerm<'a> {
    Direct(f64),
    Dual {
        chi_perp: &'a SymmetricMatrix,
        h_tau_perp: &'a SymmetricMatrix,
    },
}

impl PerpTerm<'_> {
    pub fn value(&self) -> Result<f64> {
        match self {
            PerpTerm::Direct(v) => Ok(*v),
            PerpTerm::Dual {
                chi_perp,
                h_tau_perp,
            } => {
                check_dims(chi_perp.dim(), h_tau_perp.dim())?;
                Ok(chi_perp.trace_product(h_tau_perp))
            }
        }
    }
}

/// `da/dR = Tr[A_tau D] + Tr[A_perp D_perp_tau]
///          - 1/2 Tr[A S^{-1} S_tau D] - 1/2 Tr[A D S_tau S^{-1}]`.
pub fn observable_position_derivative(
    a: &SymmetricMatrix,
    a_tau: &SymmetricMatrix,
    d: &SymmetricMatrix,
    perp: PerpTerm<'_>,
    s_inv: &SymmetricMatrix,
    s_tau: &SymmetricMatrix,
) -> Result<f64> {
    let n = a.dim();
    for m in [a_tau, d, s_inv, s_tau] {
        check_dims(n, m.dim())?;
    }
    let am = a.as_matrix();
    let dm = d.as_matrix();
    let sinv_stau = s_inv.as_matrix() * s_tau.as_matrix();
    let left = trace_of_product(&(am * &sinv_stau), dm);
    let right = trace_of_product(&(am * dm), &sinv_stau.transpose());
    Ok(a_tau.trace_product(d) + perp.value()? - 0.5 * left - 0.5 * right)
}
