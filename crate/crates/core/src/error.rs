use thiserror::Error;

/// Errors raised anywhere in the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("sample size {n} outside supported range {min}..={max}")]
    SampleSize { n: usize, min: usize, max: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("entropy weights are degenerate: every column is constant")]
    DegenerateWeights,

    #[error("singular design: columns {columns:?} are linearly dependent on earlier columns")]
    SingularDesign { columns: Vec<String> },

    #[error("predictor correlation matrix is singular or ill-conditioned (condition number {condition:.3e})")]
    CollinearityDegenerate { condition: f64 },

    #[error("response is constant; nothing to fit")]
    ConstantResponse,

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("feature `{0}` is constant; no grid can be built")]
    DegenerateGrid(String),

    #[error("{features} features exceeds the exact enumeration bound of {bound}; use the Monte-Carlo estimator")]
    EnumerationBound { features: usize, bound: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
