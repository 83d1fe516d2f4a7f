use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}` in input file")]
    MissingColumn(String),
    #[error("treatment column must be 0 or 1, found {value} at row {row}")]
    NonBinaryTreatment { row: usize, value: f64 },
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFiniteValue { row: usize, column: String },
    #[error("dataset must have at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("covariate dimension mismatch at row {row}: expected {expected}, got {got}")]
    DimensionMismatch { row: usize, expected: usize, got: usize },
    #[error("instrument is degenerate: fewer than 2 distinct values")]
    DegenerateInstrument,
    #[error("fold count k={k} must satisfy 2 <= k <= n={n}")]
    BadFoldCount { k: usize, n: usize },
    #[error("tilt delta={0} is within the degeneracy threshold of zero")]
    DegenerateTilt(f64),
    #[error("tilt overflow: |delta * z| reaches {0:.2}, above the guard of 50")]
    TiltOverflow(f64),
    #[error("learner failure: {0}")]
    LearnerFailure(String),
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("weak instrument: denominator estimate {denominator:.3e} is indistinguishable from zero")]
    WeakInstrument { denominator: f64 },
    #[error("empty stratum `{0}`: estimated mass is not positive")]
    EmptyStratum(String),
    #[error("source CDF is not monotone nondecreasing near the query point")]
    NonMonotoneCdf,
    #[error("tilt order violated: delta1={delta1} must exceed delta2={delta2}")]
    BadOrder { delta1: f64, delta2: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// CLI exit code: 1 for validation problems, 2 for estimation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::WeakInstrument { .. }
            | Error::EmptyStratum(_)
            | Error::TiltOverflow(_)
            | Error::LearnerFailure(_) => 2,
            _ => 1,
        }
    }

    /// Stable machine-readable code for structured stderr output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::NonBinaryTreatment { .. } => "NonBinaryTreatment",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::TooFewRows(_) => "TooFewRows",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::DegenerateInstrument => "DegenerateInstrument",
            Error::BadFoldCount { .. } => "BadFoldCount",
            Error::DegenerateTilt(_) => "DegenerateTilt",
            Error::TiltOverflow(_) => "TiltOverflow",
            Error::LearnerFailure(_) => "LearnerFailure",
            Error::EmptyGrid => "EmptyGrid",
            Error::WeakInstrument { .. } => "WeakInstrument",
            Error::EmptyStratum(_) => "EmptyStratum",
            Error::NonMonotoneCdf => "NonMonotoneCDF",
            Error::BadOrder { .. } => "BadOrder",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
        }
    }
}
