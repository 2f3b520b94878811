use thiserror::Error;

/// Errors raised by the set-kernel library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid measure space: {0}")]
    InvalidSpace(String),

    #[error("atom index {index} out of range for a space of {len} atoms")]
    InvalidSet { index: usize, len: usize },

    #[error("domain mismatch: {0}")]
    Domain(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("operator is not positive: minimum eigenvalue {min_eigenvalue:e} (largest {max_eigenvalue:e})")]
    NotPositive {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error(
        "no Radon-Nikodym density: kernel is not absolutely continuous on {violations} null set(s)"
    )]
    NoDensity { violations: usize },

    #[error("factorization verification failed: residual {residual:e} exceeds {bound:e}")]
    VerificationFailed { residual: f64, bound: f64 },

    #[error("inconsistent factorization: density residual {residual:e} exceeds {bound:e}")]
    Inconsistent { residual: f64, bound: f64 },

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid Markov chain: {0}")]
    InvalidChain(String),

    #[error("chain is not transient: spectral bound {spectral_bound} is not below 1")]
    NotTransient { spectral_bound: f64 },

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("unsupported integrand: {0}")]
    UnsupportedFunction(String),

    #[error("partition chain is not refinement-ordered at position {0}")]
    Ordering(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
