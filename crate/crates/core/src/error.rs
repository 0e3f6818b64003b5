use thiserror::Error;

/// Errors shared across the geometry kernels.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("point outside chart domain: {0}")]
    Domain(String),

    #[error("jacobian is rank deficient at the evaluation point")]
    RankDeficient,

    #[error("immersion is not spacelike: candidate normal has non-negative norm {0:.3e}")]
    NotSpacelike(f64),

    #[error("umbilic point: conformal factor {0:.3e} below threshold")]
    UmbilicPoint(f64),

    #[error("degenerate curvature pair: lambda_i == lambda_k")]
    DegeneratePair,

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("operation not applicable: {0}")]
    NotApplicable(String),

    #[error("image escapes every chart over the sample domain")]
    ChartEscape,

    #[error("principal multiplicity pattern mismatch: {0}")]
    ClusterMismatch(String),

    #[error("unknown surface id: {0}")]
    UnknownSurface(String),
}

pub type Result<T> = std::result::Result<T, Error>;
