use thiserror::Error;

/// Errors raised by plan construction and estimation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cartesian requires samples = k^n: {samples} is not k^{dim} for any integer k")]
    CartesianSampleCount { samples: usize, dim: usize },
    #[error("antithetic sampling requires an even sample count, got {0}")]
    AntitheticOddCount(usize),
    #[error("antithetic sampling requires a symmetric distribution, got {0}")]
    AntitheticAsymmetric(&'static str),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("dimension must be at least 1")]
    NoDimensions,
    #[error("inverse CDF argument {0} is outside (0, 1)")]
    Domain(f64),
    #[error("black box returned a non-finite output at sample {0}")]
    NonFiniteOutput(usize),
    #[error("black box returned a non-finite output at the unperturbed point")]
    NonFiniteCenter,
    #[error("leave-one-out covariate needs at least 2 samples")]
    CovariateNeedsTwoSamples,
    #[error("operation requires a scalar scale, got a scale matrix")]
    MatrixScaleNotAllowed,
    #[error("scale matrix must be lower-triangular with a strictly positive diagonal")]
    SingularScaleMatrix,
    #[error("scale must be finite and strictly positive, got {0}")]
    InvalidScale(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample plan has {got} rows but the configuration asks for {expected}")]
    SampleCountMismatch { expected: usize, got: usize },
    #[error("sample plan carries unit points only; transform it through a distribution first")]
    PlanNotTransformed,
    #[error("median order k = {0} must be odd")]
    EvenKUnsupported(usize),
    #[error("median order k = {k} must satisfy 1 < k <= s = {s}")]
    KExceedsS { k: usize, s: usize },
    #[error("median gradient supports scalar outputs only, got m = {0}")]
    VectorOutputUnsupported(usize),
    #[error("no closed-form oracle for {fixture} smoothed with {distribution}")]
    UnsupportedFixturePair { fixture: &'static str, distribution: &'static str },
    #[error("{0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
