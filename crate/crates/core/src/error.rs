use nalgebra::DVector;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("too many points: N={n} exceeds d+1={limit}")]
    TooManyPoints { n: usize, limit: usize },

    #[error("norm of point {index} is not positive")]
    ZeroNorm { index: usize },

    #[error("obtuse simplex construction failed after {attempts} attempts")]
    ConstructionFailed { attempts: usize },

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("invalid dataset: {0}")]
    InvalidSpec(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("point leaves the region where the closed form applies: {0}")]
    RegionViolation(String),

    #[error("point lies within 1e-12 of a ReLU kink along direction {direction}")]
    OnBoundary { direction: usize },

    #[error("enumeration of 2^{dirs} subsets refused; pass a cardinality bound")]
    TooLarge { dirs: usize },

    #[error("subset does not meet the cardinality requirement: {0}")]
    BadSubset(String),

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("split sigma {split} must lie in (0, sqrt(T)={max})")]
    BadSplit { split: f64, max: f64 },

    /// The frozen-coordinate solution is still returned in `frozen`.
    #[error("a coordinate sits exactly at the band midpoint")]
    MidpointDegenerate { frozen: DVector<f64> },

    #[error("coordinate equals the band midpoint; threshold is infinite")]
    Midpoint,

    #[error("escape window is empty: T0={t0} >= T1={t1}")]
    EmptyWindow { t0: f64, t1: f64 },

    #[error("training diverged at outer round {round}, step {step}")]
    Diverged { round: usize, step: usize },

    #[error("no labels to aggregate")]
    EmptyInput,

    #[error("projection axes must be distinct and below {limit}")]
    BadAxes { limit: usize },

    #[error("dataset is not planar")]
    NotPlanar,

    #[error("config: {0}")]
    Config(String),

    #[error("parse: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) | Error::Io(_) | Error::Csv(_) => 2,
            Error::TooManyPoints { .. }
            | Error::ZeroNorm { .. }
            | Error::IndexOutOfRange { .. }
            | Error::InvalidSpec(_)
            | Error::Precondition(_)
            | Error::BadSplit { .. }
            | Error::BadSubset(_)
            | Error::BadAxes { .. }
            | Error::TooLarge { .. }
            | Error::NotPlanar => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
