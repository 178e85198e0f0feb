use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library reports, grouped the way the CLI maps them to
/// exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller handed in data that violates an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration value is unusable. `field` names the offending key.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// An agent or caller broke an interface contract (e.g. acted on a masked
    /// position, mixed incongruent parameter sets).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A sample cannot take part in an episode because no insertion point is
    /// valid.
    #[error("sample `{0}` has no valid insertion position")]
    SampleExcluded(String),

    /// Training produced a non-finite loss or gradient.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn format(what: impl Into<String>, reason: impl ToString) -> Self {
        Error::Format {
            what: what.into(),
            reason: reason.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingArtifact(path);
        }
        Error::Io { path, source }
    }
}
