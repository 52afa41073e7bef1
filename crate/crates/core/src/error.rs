use thiserror::Error;

/// Errors produced by belief construction, updates, samplers and baselines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported query: {0}")]
    UnsupportedQuery(String),

    #[error("variant mismatch: {0}")]
    VariantMismatch(String),

    #[error("domain error: {0}")]
    DomainError(String),

    /// Every Monte Carlo term of an expected-likelihood estimate underflowed;
    /// the estimate is log(-inf). Grid consumers treat this as zero mass.
    #[error("non-finite estimate: all Monte Carlo terms underflowed")]
    NonFiniteEstimate,

    #[error("all grid points carry zero mass")]
    AllZeroMass,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported belief: {0}")]
    UnsupportedBelief(String),

    #[error("unsupported spec: {0}")]
    UnsupportedSpec(String),

    #[error("non-finite start: no finite initial density after {retries} jitter retries")]
    NonFiniteStart { retries: usize },

    #[error("chain divergence: block acceptance rate {rate:.6} below 0.01 after warmup")]
    ChainDivergence { rate: f64 },

    #[error("budget exhausted: accepted {accepted} of {requested} before hitting the proposal cap")]
    BudgetExhausted { accepted: usize, requested: usize },

    #[error("lag too large: lag {lag} for series of length {len}")]
    LagTooLarge { lag: usize, len: usize },

    #[error("index out of range: {index} (have {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
