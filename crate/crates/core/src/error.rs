use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("points have differing dimensions: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("weights do not form a probability vector (sum = {sum})")]
    NonProbabilityWeights { sum: f64 },

    #[error("weight {index} is not strictly positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("measure has empty support")]
    EmptySupport,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("lambda must be positive (got {0})")]
    NonPositiveLambda(f64),

    #[error("tau must be positive (got {0})")]
    NonPositiveTau(f64),

    #[error("damping eta must lie in (0, 1] (got {0})")]
    InvalidDamping(f64),

    #[error("potential is anchored on a different support")]
    AnchorMismatch,

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dual state is inconsistent with the problem: {0}")]
    InconsistentState(&'static str),

    #[error("suboptimality gap must be non-negative (got {0})")]
    NegativeGap(f64),

    #[error("zeta must lie in (0, 0.5] (got {0})")]
    ZetaOutOfRange(f64),

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(&'static str),

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("operation requires the squared Euclidean cost")]
    UnsupportedCost,

    #[error("no explicit cost block for the requested pair of supports")]
    MissingCostBlock,

    #[error("cost matrix has {rows}x{cols} entries, expected {expected_rows}x{expected_cols}")]
    CostShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },

    #[error("negative cost entry {0}")]
    NegativeCost(f64),

    #[error("sampler budget violates the step-size condition (step {step}, max {max_step})")]
    BudgetInvariantViolated { step: f64, max_step: f64 },

    #[error("dual dimension {0} exceeds the brute-force cap of 64")]
    DimensionTooLarge(usize),

    #[error("solver mode does not match the requested pipeline")]
    ModeMismatch,

    #[error("sampler budget of {required} steps exceeds the cap of {cap}")]
    BudgetExhausted { required: f64, cap: u64 },

    #[error("oracle failure: {0}")]
    OracleFailure(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
