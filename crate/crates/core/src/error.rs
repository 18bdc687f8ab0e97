use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("tokens unknown for {0}; use the fitter's per-scale-group offset scheme instead")]
    UnknownTokens(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("work estimate {estimate:.3e} exceeds cap {cap:.3e}")]
    WorkCap { estimate: f64, cap: f64 },

    #[error("width {width}: {source}")]
    AtWidth {
        width: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("row {row}, column `{column}`: {message}")]
    Row {
        row: usize,
        column: String,
        message: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerical non-convergence rather than bad input.
    pub fn is_non_convergence(&self) -> bool {
        match self {
            Error::NonConvergence(_) => true,
            Error::AtWidth { source, .. } => source.is_non_convergence(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
