use thiserror::Error;

/// Errors produced by the prediction library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("system is unobservable (observability rank {rank} < n_x = {n_x})")]
    UnobservableSystem { rank: usize, n_x: usize },
    #[error("past window L0 = {l0} is shorter than the observability index {index}")]
    LagTooShort { l0: usize, index: usize },
    #[error("system is not Schur stable (spectral radius {0})")]
    UnstableSystem(f64),
    #[error("random system generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("trajectory of length {len} is shorter than window length {needed}")]
    TrajectoryTooShort { len: usize, needed: usize },
    #[error("trajectory {index} has length {len}, expected {expected}")]
    LengthMismatch { index: usize, len: usize, expected: usize },
    #[error("Hankel signal matrices violate the independent-column noise model; pass an explicit override to use one")]
    HankelNotAllowed,
    #[error("input constraint cannot be met by the data (U F^-1 U^T singular)")]
    InfeasibleConstraint,
    #[error("projection U F^-1 U^T is numerically singular")]
    SingularProjection,
    #[error("minimum-MSE weighting requires a slack weight Q")]
    MissingQ,
    #[error("general noise covariances are not supported here; use the general minimum-MSE solver")]
    GeneralNoiseUnsupported,
    #[error("minimum-MSE predictor requires a gamma source")]
    MissingGammaSource,
    #[error("ridge weight W is not positive definite")]
    NonPositiveW,
    #[error("covariance is not positive definite")]
    SingularSigma,
    #[error("covariance matrix is not symmetric positive semidefinite: {0}")]
    InvalidCovariance(String),
    #[error("region has dimension {0}, expected 2")]
    NotTwoDimensional(usize),
    #[error("system {seed_index}: {source}")]
    Campaign {
        seed_index: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
