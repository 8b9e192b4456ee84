use thiserror::Error;

/// Anything that prevents a run from producing a report. All of these map to
/// exit code 2: they are problems with the input or environment, not verdicts
/// about the mathematics.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("writing {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("check '{label}': {message}")]
    Check { label: String, message: String },
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, CliError>;
