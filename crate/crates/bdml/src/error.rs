use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at index {index}: {context}")]
    NonFinite { context: String, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Zero lies outside the convex hull of the score values; the moment
    /// constraint cannot be met with strictly positive weights.
    #[error("moment condition infeasible: score values do not bracket zero")]
    InfeasibleMoment,

    #[error(
        "dual solver did not converge: residuals |sum(p)-1|={mass_residual:.3e}, \
         |sum(p*psi)|={moment_residual:.3e}"
    )]
    NonConvergence {
        mass_residual: f64,
        moment_residual: f64,
    },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("learner failure: {0}")]
    Learner(String),

    #[error("learner failure on fold {fold}: {source}")]
    FoldFailure {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("data error at row {row}{}: {message}", column.as_deref().map(|c| format!(", column '{c}'")).unwrap_or_default())]
    Data {
        row: usize,
        column: Option<String>,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) => 2,
            Error::Data { .. } | Error::Csv(_) => 3,
            _ => 4,
        }
    }
}
