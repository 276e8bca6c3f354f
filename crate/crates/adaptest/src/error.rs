use thiserror::Error;

/// Application errors; [`AppError::exit_code`] maps them to process exit
/// statuses.
#[derive(Debug, Error)]
pub enum AppError {
    /// The scenario file could not be read or parsed.
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("config: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] adaptest_core::Error),
    /// A run finished but broke one of its monitored invariants.
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn is_no_convergence(e: &adaptest_core::Error) -> bool {
    match e {
        adaptest_core::Error::NoConvergence { .. } => true,
        adaptest_core::Error::AtEpoch { source, .. } => is_no_convergence(source),
        _ => false,
    }
}

impl AppError {
    /// 1 for configuration problems, 3 when a solver did not converge and 2
    /// for every other runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Parse(_) | AppError::Invalid { .. } | AppError::Usage(_) => 1,
            AppError::Core(e) if is_no_convergence(e) => 3,
            _ => 2,
        }
    }
}
