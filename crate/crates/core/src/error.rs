use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {msg}")]
    Dimension { op: &'static str, msg: String },

    #[error("index error in {op}: {msg}")]
    Index { op: &'static str, msg: String },

    #[error("non-finite value produced by {op}")]
    Numeric { op: &'static str },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation error in field `{field}`: {msg}")]
    Validation { field: String, msg: String },

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{}: {msg}", location(file, *line))]
    Format {
        file: PathBuf,
        line: Option<usize>,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn location(file: &std::path::Path, line: Option<usize>) -> String {
    match line {
        Some(n) => format!("{}:{}", file.display(), n),
        None => file.display().to_string(),
    }
}

impl Error {
    pub(crate) fn dim(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn index(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Index {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(file: impl Into<PathBuf>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
