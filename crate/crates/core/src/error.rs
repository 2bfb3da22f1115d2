use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} is not positive definite (failed at pivot {pivot})")]
    NotPositiveDefinite { what: String, pivot: usize },

    #[error("{what} is not negative definite")]
    NotNegativeDefinite { what: String },

    #[error("Kronecker product of size {rows}x{cols} exceeds the materialization cap {cap}")]
    Capacity { rows: usize, cols: usize, cap: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported kernel family `{0}`")]
    UnsupportedKernel(String),

    #[error("innovation covariance at step {step} is not positive definite")]
    Innovation { step: usize },

    #[error("timestamps must be strictly increasing (violated at index {index})")]
    TimeOrder { index: usize },

    #[error("non-finite ELBO at iteration {iteration} (theta = {theta:?}, trace = {trace:?})")]
    NonFiniteElbo {
        iteration: usize,
        theta: Vec<f64>,
        trace: Vec<f64>,
    },

    #[error("non-finite ELBO while probing gradient coordinate {coordinate}")]
    Gradient { coordinate: usize },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate site at t = {t} (line {line})")]
    DuplicateSite { t: f64, line: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end:
    /// 1 usage/configuration, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnsupportedKernel(_) | Error::Json(_) => 1,
            Error::Parse { .. }
            | Error::DuplicateSite { .. }
            | Error::EmptyDataset
            | Error::Io(_)
            | Error::Csv(_)
            | Error::TimeOrder { .. }
            | Error::Index(_)
            | Error::Dimension(_) => 2,
            _ => 3,
        }
    }

    /// Short stable tag for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::NotNegativeDefinite { .. } => "not_negative_definite",
            Error::Capacity { .. } => "capacity",
            Error::Dimension(_) => "dimension",
            Error::Domain(_) => "domain",
            Error::UnsupportedKernel(_) => "unsupported_kernel",
            Error::Innovation { .. } => "innovation",
            Error::TimeOrder { .. } => "time_order",
            Error::NonFiniteElbo { .. } => "non_finite_elbo",
            Error::Gradient { .. } => "gradient",
            Error::Index(_) => "index",
            Error::Parse { .. } => "parse",
            Error::DuplicateSite { .. } => "duplicate_site",
            Error::EmptyDataset => "empty_dataset",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn not_pd(what: impl Into<String>, pivot: usize) -> Self {
        Error::NotPositiveDefinite {
            what: what.into(),
            pivot,
        }
    }
}
