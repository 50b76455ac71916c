use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} of the transition matrix is not stochastic (row sum {sum}, min entry {min})")]
    NotStochastic { row: usize, sum: f64, min: f64 },
    #[error("transition matrix is not irreducible: mode {to} is unreachable from mode {from}")]
    NotIrreducible { from: usize, to: usize },
    #[error("transition matrix is periodic with period {period}")]
    NotAperiodic { period: usize },
    #[error("initial mode {mode} is outside 1..={modes}")]
    BadInitialMode { mode: usize, modes: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("interval distribution has empty support")]
    EmptySupport,
    #[error("negative probability {prob} for interval length {tau}")]
    NegativeProbability { tau: usize, prob: f64 },
    #[error("interval distribution has zero total mass")]
    ZeroTotalMass,
    #[error("bad uniform bounds [{lo}, {hi}]")]
    BadBounds { lo: usize, hi: usize },
    #[error("observation probability theta = {0} must lie in (0, 1)")]
    BadTheta(f64),
    #[error("time {k} lies beyond the covered horizon {horizon}")]
    OutOfHorizon { k: usize, horizon: usize },

    #[error("interval support reaches length {support}, beyond max_len {max_len}")]
    SupportExceedsMaxLen { support: usize, max_len: usize },
    #[error("sequence space would hold {count} sequences, over the cap of {cap}")]
    ExplosionGuard { count: u128, cap: usize },
    #[error("mode path of length {len} does not cover observation time {needed}")]
    PathTooShort { len: usize, needed: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("zeta[{i}][{j}] = {value} is not positive")]
    NonPositiveZeta { i: usize, j: usize, value: f64 },
    #[error("I - (1 - theta) P is singular")]
    SingularResolvent,

    #[error("LMI solver hit the iteration cap ({iters}) without a verdict")]
    SolverStall { iters: usize },
    #[error("no feasible point on the zeta grid")]
    NoFeasiblePoint,
    #[error("R_tilde is singular")]
    SingularRtilde,

    #[error("state left the finite range at step {step}")]
    NonFiniteState { step: usize },

    #[error("unknown example {0}")]
    UnknownExample(u32),
    #[error("unsupported sweep: {0}")]
    UnsupportedParameter(String),
    #[error("parse error in {file}: {message}")]
    Parse { file: String, message: String },
    #[error("validation error at {field}: {message}")]
    Validation { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
