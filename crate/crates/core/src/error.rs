use std::path::PathBuf;

/// Errors produced by the analytical engine, the CT simulator and the solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Poisson series did not meet tail bound {tail_bound:e} within {max_terms} terms (mu = {mu})")]
    TruncationFailure {
        mu: f64,
        tail_bound: f64,
        max_terms: usize,
    },

    #[error("estimator family {0} has no ratio prediction")]
    UnsupportedFamily(&'static str),

    #[error("V_d weights are degenerate (sum of x*/(s a) is zero)")]
    DegenerateWeights,

    #[error("invalid decay exponents: alpha = {alpha} (needs > 1/2), beta = {beta} (needs > 0)")]
    InvalidDecay { alpha: f64, beta: f64 },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("forward projection of the image is identically zero")]
    ZeroSinogram,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("counts must be nonnegative integers (bin {0})")]
    NonIntegerCounts(usize),

    #[error("initial image must be positive on the support (pixel {0})")]
    NonPositiveInit(usize),

    #[error("objective became non-finite at iteration {0}")]
    NonFiniteObjective(usize),

    #[error("oracle weights require the expected sinogram of the ground truth")]
    MissingOracle,

    #[error("plug-in-FBP weights require an FBP image")]
    MissingFbp,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
