use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid link: {0}")]
    InvalidLink(String),

    /// Scenario, network or parameter validation failure. `line` is 1-based
    /// when the offending element could be located in the source text.
    #[error("{}configuration error: {message}", location_prefix(.path, .line))]
    Config {
        path: Option<PathBuf>,
        line: Option<usize>,
        message: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate request: start and end are both node {0}")]
    DegenerateRequest(usize),

    #[error("report error: {0}")]
    Report(String),

    #[error("runtime error: {0}")]
    Runtime(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location_prefix(path: &Option<PathBuf>, line: &Option<usize>) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!("{}:{}: ", p.display(), l),
        (Some(p), None) => format!("{}: ", p.display()),
        (None, Some(l)) => format!("line {l}: "),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config {
            path: None,
            line: None,
            message: message.into(),
        }
    }

    pub(crate) fn config_at(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Config {
            path: None,
            line,
            message: message.into(),
        }
    }

    /// Attaches a source path to a configuration error; other variants pass through.
    pub fn with_path(self, p: impl Into<PathBuf>) -> Self {
        match self {
            Error::Config {
                path: None,
                line,
                message,
            } => Error::Config {
                path: Some(p.into()),
                line,
                message,
            },
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidLink(_) | Error::Io { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
