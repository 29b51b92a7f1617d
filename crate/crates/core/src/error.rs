use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Not enough samples to fill the requested data matrices.
    InsufficientData { required: usize, available: usize },
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A diagonal entry of `L11`, `L22` or `L33` collapsed: the data is not
    /// exciting enough for the requested horizons.
    RankDeficient {
        block: &'static str,
        index: usize,
        ratio: f64,
    },
    InvalidArgument(String),
    /// Output channel with zero sample variance cannot be given a finite SNR.
    ZeroPower { channel: usize },
    NonFinite { step: usize },
    /// Equality system or inequality set admits no solution. `rows` names
    /// the constraint rows that could not be satisfied.
    Infeasible { rows: Vec<usize> },
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    Unbounded,
    /// The controller needs `required` past samples before it can act.
    ColdStart { required: usize, available: usize },
    /// Slip crossed into the open-loop unstable region during data collection.
    SlipInstability { step: usize, lambda: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InsufficientData {
                required,
                available,
            } => write!(
                f,
                "insufficient data: {required} samples required, {available} available"
            ),
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, found {found}"),
            Error::RankDeficient {
                block,
                index,
                ratio,
            } => write!(
                f,
                "rank deficient data: diagonal {index} of {block} is {ratio:e} of the largest; \
                 the training input is not exciting enough"
            ),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ZeroPower { channel } => {
                write!(f, "output channel {channel} has zero power, SNR is undefined")
            }
            Error::NonFinite { step } => write!(f, "non-finite state at integration step {step}"),
            Error::Infeasible { rows } => write!(f, "infeasible problem, violated rows {rows:?}"),
            Error::NotPositiveSemidefinite { min_eigenvalue } => write!(
                f,
                "Hessian is not positive semidefinite on the feasible subspace (min eigenvalue {min_eigenvalue:e})"
            ),
            Error::Unbounded => write!(f, "problem is unbounded below"),
            Error::ColdStart {
                required,
                available,
            } => write!(
                f,
                "controller window is cold: {available} of {required} past samples available"
            ),
            Error::SlipInstability { step, lambda } => write!(
                f,
                "slip {lambda} entered the unstable region at step {step}"
            ),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
