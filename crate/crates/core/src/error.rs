use thiserror::Error;

/// Errors produced by the sensitivity-analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("design matrix is numerically rank deficient (condition estimate {0:.3e})")]
    RankDeficient(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix has a negative eigenvalue {0:.3e}")]
    NegativeEigenvalue(f64),

    #[error("covariance matrix is singular: {0}")]
    SingularCovariance(String),

    #[error("response has zero residual variance")]
    DegenerateResponse,

    #[error("sensitivity parameter {name} has norm {norm} outside the open unit ball")]
    BoundaryR { name: &'static str, norm: f64 },

    #[error("observed R measure {name} has norm {norm}, too close to 1")]
    DegenerateObservedR { name: &'static str, norm: f64 },

    #[error("implied confounder covariance is not positive definite")]
    ConfounderCovarianceDegenerate,

    #[error("insufficient samples: n = {n}, need at least {required}")]
    InsufficientSamples { n: usize, required: usize },

    #[error("infeasible confounder target: {0}")]
    InfeasibleTarget(String),

    #[error("root finding failed: {0}")]
    RootFindFailed(String),

    #[error("too many singular bootstrap resamples at index {index}")]
    TooManySingularResamples { index: usize },

    #[error("estimator failed on bootstrap resample {index}: {source}")]
    EstimatorFailed { index: usize, source: Box<Error> },

    #[error("optimizer budget {budget} too small for dimension {dim}")]
    BudgetTooSmall { budget: usize, dim: usize },

    #[error("benchmark anchor {0} is degenerate")]
    DegenerateAnchor(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
