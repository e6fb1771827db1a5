use std::fmt;

use thiserror::Error;

/// Errors raised by the estimators and their helpers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SsgdError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite index value{}", fmt_row(*.row))]
    NumericOverflow { row: Option<usize> },

    #[error("adaptive quadrature did not converge on [0, {upper}]")]
    QuadratureNonConvergence { upper: f64 },

    #[error("invalid dataset: {}", join_violations(.0))]
    InvalidDataset(Vec<DatasetViolation>),

    #[error("invalid link function: {0}")]
    InvalidLink(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index has zero sample variance; the sieve basis is undefined")]
    DegenerateIndex,

    #[error("sieve basis of order {requested} is rank deficient; achievable order is {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("non-finite mean gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("iteration {iteration}: {source}")]
    AtIteration { iteration: usize, source: Box<SsgdError> },

    #[error("numeraire coefficient {index} is numerically zero ({value:e}); choose a different numeraire index")]
    DegenerateNumeraire { index: usize, value: f64 },

    #[error("bread matrix is not invertible (reciprocal condition number {rcond:e})")]
    SingularBread { rcond: f64 },

    #[error("confidence level must lie strictly inside (0, 1), got {0}")]
    InvalidLevel(f64),

    #[error("{failed} of {total} replications failed (more than 5%)")]
    TooManyFailures { failed: usize, total: usize },
}

impl SsgdError {
    /// True for failures caused by bad inputs or settings rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        match self {
            SsgdError::InvalidDataset(_)
            | SsgdError::InvalidConfig(_)
            | SsgdError::InvalidLink(_)
            | SsgdError::InvalidLevel(_)
            | SsgdError::DimensionMismatch { .. }
            | SsgdError::DegenerateNumeraire { .. } => true,
            SsgdError::AtIteration { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    /// Iteration at which an estimator loop failed, if known.
    pub fn iteration(&self) -> Option<usize> {
        match self {
            SsgdError::NonFiniteGradient { iteration } | SsgdError::AtIteration { iteration, .. } => Some(*iteration),
            _ => None,
        }
    }
}

fn fmt_row(row: Option<usize>) -> String {
    row.map(|r| format!(" at row {r}")).unwrap_or_default()
}

fn join_violations(v: &[DatasetViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// One broken dataset invariant. Rows and columns are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetViolation {
    LengthMismatch { rows: usize, outcomes: usize },
    TooFewRows { n: usize, p: usize },
    NonBinaryOutcome { row: usize, value: f64 },
    NonFinite { row: usize, column: usize },
    ConstantColumn { index: usize },
}

impl DatasetViolation {
    /// Stable short code, one per invariant.
    pub fn code(&self) -> &'static str {
        match self {
            DatasetViolation::LengthMismatch { .. } => "LengthMismatch",
            DatasetViolation::TooFewRows { .. } => "TooFewRows",
            DatasetViolation::NonBinaryOutcome { .. } => "NonBinaryOutcome",
            DatasetViolation::NonFinite { .. } => "NonFinite",
            DatasetViolation::ConstantColumn { .. } => "ConstantColumn",
        }
    }
}

impl fmt::Display for DatasetViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetViolation::LengthMismatch { rows, outcomes } => {
                write!(f, "X has {rows} rows but y has {outcomes} entries")
            }
            DatasetViolation::TooFewRows { n, p } => {
                write!(f, "need at least p + 1 = {} rows, found {n}", p + 1)
            }
            DatasetViolation::NonBinaryOutcome { row, value } => {
                write!(f, "NonBinaryOutcome({row}): y = {value} is not 0 or 1")
            }
            DatasetViolation::NonFinite { row, column } => {
                write!(f, "NonFinite({row}, {column}): covariate is not finite")
            }
            DatasetViolation::ConstantColumn { index } => {
                write!(f, "ConstantColumn({index}): column has no variation")
            }
        }
    }
}

pub type Result<T, E = SsgdError> = std::result::Result<T, E>;
