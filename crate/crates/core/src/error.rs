use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("party count {n} is not supported (need {min} <= n <= {max})")]
    BadArity { n: usize, min: usize, max: usize },

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:.3e})")]
    NonHermitian { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("value {value} outside the admissible range [{lo}, {hi}]")]
    BadRange { value: f64, lo: f64, hi: f64 },

    #[error("Bell value {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid block state: {0}")]
    BadBlocks(String),

    #[error("invalid setting selector: {0}")]
    BadSelector(String),

    #[error("index out of range: {0}")]
    BadIndex(String),

    #[error("behavior is not a valid no-signalling distribution: {0}")]
    InvalidBehavior(String),

    #[error("Bell value {value} exceeds the relaxation maximum {max}")]
    InfeasibleValue { value: f64, max: f64 },

    #[error("solver stopped after {iterations} iterations (primal residual {primal:.3e}, dual residual {dual:.3e})")]
    MaxIterations {
        iterations: usize,
        primal: f64,
        dual: f64,
        objective: f64,
    },

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("insufficient data for correlator {correlator}: {samples} samples (need {required})")]
    InsufficientData {
        correlator: String,
        samples: usize,
        required: usize,
    },

    #[error("no Bell violation: estimate {estimate} minus 4 std errors does not exceed the classical bound {classical}")]
    NoViolation { estimate: f64, classical: f64 },

    #[error("extractable output length {0} is not positive")]
    OutputTooShort(i64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
