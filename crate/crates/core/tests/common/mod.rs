//! Reference implementations shared by the integration tests. None of them
//! call into the code under test except for matrix containers.

#![allow(dead_code)]

use dmresponse::linalg::{Matrix, SymmetricMatrix};
use dmresponse::models::{gapped_random, random_symmetric};
use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gapped Hamiltonian with random symmetric observable and perturbation.
pub struct System {
    pub h0: SymmetricMatrix,
    pub a: SymmetricMatrix,
    pub h1: SymmetricMatrix,
    pub n_occ: usize,
}

pub fn gapped_system(n: usize, gap: f64, seed: u64) -> System {
    let mut r = rng(seed);
    let n_occ = n / 2;
    let h0 = gapped_random(n, n_occ, gap, 2.0, &mut r).unwrap();
    let a = random_symmetric(n, &mut r);
    let h1 = random_symmetric(n, &mut r);
    System { h0, a, h1, n_occ }
}

/// Eigenpairs from nalgebra, ascending.
pub fn eigen(h: &SymmetricMatrix) -> (Vec<f64>, Matrix) {
    let e = SymmetricEigen::new(h.as_matrix().clone());
    let mut order: Vec<usize> = (0..e.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
    let values = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(h.dim(), h.dim(), |r, c| e.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Projector onto the `n_occ` lowest eigenvectors.
pub fn projector(h: &SymmetricMatrix, n_occ: usize) -> SymmetricMatrix {
    let (_, v) = eigen(h);
    let occ = v.columns(0, n_occ);
    SymmetricMatrix::symmetrize(occ * occ.transpose())
}

/// Exact first-order change of the projector:
/// `V [ (f_i - f_j) / (l_i - l_j) (V^T H1 V)_ij ] V^T`.
pub fn projector_derivative(h: &SymmetricMatrix, h1: &SymmetricMatrix, n_occ: usize) -> SymmetricMatrix {
    let (l, v) = eigen(h);
    let t = v.transpose() * h1.as_matrix() * &v;
    let n = l.len();
    let occ = |i: usize| if i < n_occ { 1.0 } else { 0.0 };
    let inner = Matrix::from_fn(n, n, |i, j| {
        let df = occ(i) - occ(j);
        if df == 0.0 {
            0.0
        } else {
            df / (l[i] - l[j]) * t[(i, j)]
        }
    });
    SymmetricMatrix::symmetrize(&v * inner * v.transpose())
}

/// `S^{-1/2}` from nalgebra's eigensolver.
pub fn lowdin(s: &SymmetricMatrix) -> SymmetricMatrix {
    let (l, v) = eigen(s);
    let d = Matrix::from_diagonal(&nalgebra::DVector::from_iterator(l.len(), l.iter().map(|x| 1.0 / x.sqrt())));
    SymmetricMatrix::symmetrize(&v * d * v.transpose())
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Round-to-nearest-even binary16 encoding built from the integer fields of
/// the `f64`. `None` when the input is not finite or exceeds the largest
/// finite binary16 value.
pub fn encode_binary16(x: f64) -> Option<u16> {
    if !x.is_finite() || x.abs() > 65504.0 {
        return None;
    }
    let bits = x.to_bits();
    let sign = ((bits >> 63) as u16) << 15;
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        // zero or an f64 subnormal, far below half the smallest binary16 subnormal
        return Some(sign);
    }
    let mant = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
    // |x| = mant * 2^e2
    let e2 = biased - 1075;
    let lg = biased - 1023;
    // spacing of binary16 values at this magnitude is 2^qexp
    let qexp = lg.max(-14) - 10;
    let shift = qexp - e2;
    let n: u64 = if shift <= 0 {
        mant << (-shift)
    } else if shift >= 64 {
        0
    } else {
        let q = mant >> shift;
        let rem = mant & ((1u64 << shift) - 1);
        let half = 1u64 << (shift - 1);
        if rem > half || (rem == half && q & 1 == 1) {
            q + 1
        } else {
            q
        }
    };
    let field = if lg < -14 {
        // subnormal; n == 1024 is exactly the smallest normal encoding
        n as u16
    } else {
        let (n, lg) = if n == 2048 { (1024, lg + 1) } else { (n, lg) };
        (((lg + 15) as u16) << 10) | (n as u16 - 1024)
    };
    Some(sign | field)
}

pub fn decode_binary16(h: u16) -> f64 {
    let sign = if h & 0x8000 != 0 { -1.0 } else { 1.0 };
    let e = ((h >> 10) & 0x1f) as i32;
    let m = (h & 0x3ff) as f64;
    let mag = match e {
        0 => m * 2f64.powi(-24),
        31 => {
            if m == 0.0 {
                f64::INFINITY
            } else {
                f64::NAN
            }
        }
        _ => (1024.0 + m) * 2f64.powi(e - 25),
    };
    sign * mag
}
