use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix is indefinite: eigenvalue {min_eigenvalue:e} below tolerance (largest {max_eigenvalue:e})")]
    IndefiniteBeyondTolerance { min_eigenvalue: f64, max_eigenvalue: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("inflation factor must be nonnegative, got {0}")]
    NegativeInflation(f64),

    #[error("localization length scale must be positive and finite, got {0}")]
    InvalidLengthScale(f64),

    #[error("innovation covariance is singular")]
    SingularInnovationCovariance,

    #[error("steady-state iteration did not converge within {max_iter} iterations")]
    NoConvergence { max_iter: usize },

    #[error("need at least {needed} ensemble members, found {found}")]
    TooFewMembers { needed: usize, found: usize },

    #[error("model-error covariance Q is singular")]
    SingularQ,

    #[error("observation-error covariance R is singular")]
    SingularR,

    #[error("proposal covariance is singular")]
    SingularProposalCovariance,

    #[error("covariance is singular")]
    SingularCovariance,

    #[error("all weights are zero")]
    AllWeightsZero,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("negative eigenvalue {0}")]
    NegativeEigenvalue(f64),

    #[error("empty spectrum")]
    EmptySpectrum,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("log-linear fit needs positive G values, got {0}")]
    NonPositiveG(f64),

    #[error("log-linear fit needs at least three points with two distinct abscissae")]
    DegenerateAbscissae,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_mismatch(
    context: &'static str,
    expected: impl std::fmt::Display,
    found: impl std::fmt::Display,
) -> Error {
    Error::DimensionMismatch {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
