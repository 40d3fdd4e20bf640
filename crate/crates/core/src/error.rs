use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix must be square and non-empty (got {rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix asymmetry {asymmetry:.3e} exceeds tolerance {tolerance:.3e}")]
    Asymmetric { asymmetry: f64, tolerance: f64 },

    #[error("non-finite entry in {what}")]
    NotFinite { what: &'static str },

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:.3e})")]
    EigenNoConvergence { sweeps: usize, off_norm: f64 },

    #[error("matrix function is not finite at eigenvalue {eigenvalue}")]
    NonFiniteFunctionValue { eigenvalue: f64 },

    #[error("matrix is not positive definite (eigenvalue {eigenvalue:.3e})")]
    NotPositiveDefinite { eigenvalue: f64 },

    #[error("matrix is singular")]
    Singular,

    #[error("invalid spectral bounds [{min}, {max}]")]
    InvalidBounds { min: f64, max: f64 },

    #[error("occupation {n_occ} out of range for dimension {dim}")]
    InvalidOccupation { n_occ: f64, dim: usize },

    #[error("SP2 expansion did not converge in {iterations} iterations (last idempotency error {last:.3e})", last = idempotency_log.last().copied().unwrap_or(f64::NAN))]
    Sp2NoConvergence {
        iterations: usize,
        idempotency_log: Vec<f64>,
    },

    #[error("chemical potential bracket [{lo}, {hi}] does not enclose occupation {target}")]
    MuBracket { lo: f64, hi: f64, target: f64 },

    #[error("chemical-potential response is ill-posed: Tr of the identity response vanishes")]
    VanishingOccupationResponse,

    #[error("eigenvalue {eigenvalue} lies at the chemical potential {mu} (no gap)")]
    Gapless { eigenvalue: f64, mu: f64 },

    #[error("self-consistency did not converge in {iterations} iterations (last residual {last:.3e})", last = residuals.last().copied().unwrap_or(f64::NAN))]
    ScfNoConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("value {value} overflows binary16")]
    Binary16Overflow { value: f64 },

    #[error("cannot allocate {bytes} bytes for the stored expansion")]
    Resource { bytes: usize },

    #[error("non-finite value in result field {field}")]
    NonFiniteResult { field: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input) map to exit status 1 in the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigenNoConvergence { .. }
                | Error::NonFiniteFunctionValue { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::Singular
                | Error::Sp2NoConvergence { .. }
                | Error::MuBracket { .. }
                | Error::VanishingOccupationResponse
                | Error::Gapless { .. }
                | Error::ScfNoConvergence { .. }
                | Error::Binary16Overflow { .. }
                | Error::Resource { .. }
                | Error::NonFiniteResult { .. }
        )
    }

    /// Stable variant name used in run reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotSquare { .. } => "not_square",
            Error::Asymmetric { .. } => "asymmetric",
            Error::NotFinite { .. } => "not_finite",
            Error::EigenNoConvergence { .. } => "eigen_no_convergence",
            Error::NonFiniteFunctionValue { .. } => "non_finite_function_value",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::Singular => "singular",
            Error::InvalidBounds { .. } => "invalid_bounds",
            Error::InvalidOccupation { .. } => "invalid_occupation",
            Error::Sp2NoConvergence { .. } => "sp2_no_convergence",
            Error::MuBracket { .. } => "mu_bracket",
            Error::VanishingOccupationResponse => "vanishing_occupation_response",
            Error::Gapless { .. } => "gapless",
            Error::ScfNoConvergence { .. } => "scf_no_convergence",
            Error::Binary16Overflow { .. } => "binary16_overflow",
            Error::Resource { .. } => "resource",
            Error::NonFiniteResult { .. } => "non_finite_result",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}
