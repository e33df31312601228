use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("value {value} outside basis range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no data: {0}")]
    EmptyData(String),

    #[error("Newton iterations did not converge after {iterations} steps (max |gradient| = {gradient:.3e})")]
    NonConvergence { iterations: usize, gradient: f64 },

    #[error("matrix not positive definite while {context} (smallest diagonal entry {min_diagonal:.3e})")]
    NotPositiveDefinite { context: String, min_diagonal: f64 },

    #[error("fold design infeasible: {0}")]
    InfeasibleFolds(String),

    #[error("record sets differ between reports: {0}")]
    MismatchedRecords(String),

    #[error("model has no exposure term: {0}")]
    MissingExposure(String),

    #[error("malformed input: {0}")]
    Data(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::NotPositiveDefinite { .. })
    }

    /// True for problems with input data (files, records).
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Data(_) | Error::Csv(_) | Error::Io(_) | Error::EmptyData(_) | Error::OutOfRange { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
