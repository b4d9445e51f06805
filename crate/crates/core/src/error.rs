use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the domain of a numerical routine.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    Decomposition { pivot: usize, value: f64 },

    #[error("target {target} is outside the bracket [{lo_value}, {hi_value}]")]
    Bracketing { target: f64, lo_value: f64, hi_value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("correlation estimation failed: {0}")]
    Estimation(String),

    #[error("line {line}: {detail}")]
    Parse { line: u64, detail: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("insufficient training history: {available} complete days available, {required} required")]
    Window { available: usize, required: usize },

    #[error("invalid synthetic spec: {0}")]
    Synthetic(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing input {path}: {detail}")]
    Dependency { path: PathBuf, detail: String },

    #[error("no scoreable cases")]
    EmptyReport,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::Decomposition { .. } => "decomposition",
            Error::Bracketing { .. } => "bracketing",
            Error::Dimension { .. } => "dimension",
            Error::Fit(_) => "fit",
            Error::Estimation(_) => "estimation",
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::Window { .. } => "window",
            Error::Synthetic(_) => "synthetic",
            Error::Config(_) => "config",
            Error::Dependency { .. } => "dependency",
            Error::EmptyReport => "empty_report",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
