use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical precondition (step size, grid shape, ...) does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A configuration value failed validation. `path` is the dotted JSON path.
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A pulse schedule cannot be realised with the requested timings.
    #[error("infeasible schedule: {0}")]
    Schedule(String),

    /// A fit did not produce a usable result.
    #[error("fit failed: {0}")]
    Fit(String),

    /// A measured decay is slower than the pure relaxation floor allows.
    #[error("infeasible rate: {0}")]
    InfeasibleRate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Prefix the path of a configuration error with a parent field name.
    pub(crate) fn within(self, parent: &str) -> Self {
        match self {
            Error::Config { path, message } => Error::Config {
                path: format!("{parent}.{path}"),
                message,
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
