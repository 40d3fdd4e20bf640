//! Synthetic model Hamiltonians and overlap matrices.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigendecompose, Matrix, SymmetricMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Nearest-neighbour chain, hopping -1, alternating on-site +-gap/2.
    Chain,
    /// Random orthogonal conjugate of a spectrum with a gap at the occupation boundary.
    GappedRandom,
    /// Chain Hamiltonian together with a tridiagonal overlap matrix.
    OverlapChain,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(ModelKind::Chain),
            "gapped_random" | "gapped-random" => Ok(ModelKind::GappedRandom),
            "overlap_chain" | "overlap-chain" => Ok(ModelKind::OverlapChain),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    pub gap: f64,
    /// Spectral half-width of `gapped_random` models.
    pub bandwidth: f64,
    pub seed: u64,
    /// Nearest-neighbour overlap of `overlap_chain`, in (0, 0.5).
    pub overlap: f64,
    /// Number of states below the gap of `gapped_random`; defaults to `n / 2`.
    pub n_occ: Option<usize>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, n: usize, gap: f64) -> Self {
        ModelSpec {
            kind,
            n,
            gap,
            bandwidth: 2.0,
            seed: 0,
            overlap: 0.2,
            n_occ: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n == 0 {
            return bad("model size must be positive");
        }
        if !(self.gap.is_finite() && self.gap >= 0.0) {
            return bad("gap must be a non-negative number");
        }
        match self.kind {
            ModelKind::GappedRandom => {
                if !(self.bandwidth.is_finite() && self.bandwidth > self.gap / 2.0) {
                    return bad("bandwidth must exceed gap/2");
                }
                if let Some(k) = self.n_occ {
                    if k > self.n {
                        return bad("n_occ exceeds model size");
                    }
                }
            }
            ModelKind::OverlapChain => {
                if !(self.overlap > 0.0 && self.overlap < 0.5) {
                    return bad("overlap must lie in (0, 0.5)");
                }
            }
            ModelKind::Chain => {}
        }
        Ok(())
    }
}

/// Generates the model Hamiltonian and, for `overlap_chain`, its overlap matrix.
pub fn generate_model(spec: &ModelSpec) -> Result<(SymmetricMatrix, Option<SymmetricMatrix>)> {
    spec.validate()?;
    match spec.kind {
        ModelKind::Chain => Ok((chain_hamiltonian(spec.n, spec.gap), None)),
        ModelKind::OverlapChain => Ok((
            chain_hamiltonian(spec.n, spec.gap),
            Some(overlap_chain(spec.n, spec.overlap)),
        )),
        ModelKind::GappedRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let n_occ = spec.n_occ.unwrap_or(spec.n / 2);
            Ok((
                gapped_random(spec.n, n_occ, spec.gap, spec.bandwidth, &mut rng)?,
                None,
            ))
        }
    }
}

/// On-site and hopping entries of the chain, `(diagonal, off_diagonal)`.
pub fn chain_tridiagonal(n: usize, gap: f64) -> (Vec<f64>, Vec<f64>) {
    let diag = (0..n)
        .map(|i| if i % 2 == 0 { gap / 2.0 } else { -gap / 2.0 })
        .collect();
    (diag, vec![-1.0; n.saturating_sub(1)])
}

pub fn chain_hamiltonian(n: usize, gap: f64) -> SymmetricMatrix {
    let (d, e) = chain_tridiagonal(n, gap);
    SymmetricMatrix::from_fn(n, |i, j| {
        if i == j {
            d[i]
        } else if j == i + 1 {
            e[i]
        } else {
            0.0
        }
    })
}

pub fn overlap_chain(n: usize, s: f64) -> SymmetricMatrix {
    SymmetricMatrix::from_fn(n, |i, j| {
        if i == j {
            1.0
        } else if j == i + 1 {
            s
        } else {
            0.0
        }
    })
}

/// Symmetric matrix with entries uniform in [-1, 1].
pub fn random_symmetric(n: usize, rng: &mut impl Rng) -> SymmetricMatrix {
    SymmetricMatrix::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0))
}

/// Diagonal matrix with entries uniform in [-1, 1] (random local potential).
pub fn random_diagonal(n: usize, rng: &mut impl Rng) -> SymmetricMatrix {
    let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    SymmetricMatrix::from_diagonal(&d)
}

/// Orthogonal matrix taken from the eigenvectors of a random symmetric matrix.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Matrix {
    sym_eigendecompose(&random_symmetric(n, rng))
        .expect("Jacobi converges on bounded random input")
        .vectors
}

/// `Q diag(lambda) Q^T` with `n_occ` eigenvalues in `[-bandwidth, -gap/2]` and
/// the rest in `[gap/2, bandwidth]`.
pub fn gapped_random(
    n: usize,
    n_occ: usize,
    gap: f64,
    bandwidth: f64,
    rng: &mut impl Rng,
) -> Result<SymmetricMatrix> {
    if n_occ > n || bandwidth.is_nan() || bandwidth <= gap / 2.0 {
        return Err(Error::InvalidArgument(
            "gapped_random needs n_occ <= n and bandwidth > gap/2".into(),
        ));
    }
    let half = gap / 2.0;
    let spectrum: Vec<f64> = (0..n)
        .map(|k| {
            let u: f64 = rng.gen();
            let mag = half + u * (bandwidth - half);
            if k < n_occ {
                -mag
            } else {
                mag
            }
        })
        .collect();
    let q = random_orthogonal(n, rng);
    let mut scaled = q.clone();
    for (k, l) in spectrum.iter().enumerate() {
        scaled.column_mut(k).scale_mut(*l);
    }
    Ok(SymmetricMatrix::symmetrize(scaled * q.transpose()))
}
