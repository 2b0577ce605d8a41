use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: expected dimension {expected}, found {found}")]
    Shape {
        op: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("sequence too short: need at least {min} steps, got {len}")]
    SequenceTooShort { len: usize, min: usize },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema: {0}")]
    Schema(String),

    #[error("feature {index} is constant over the training split (std = 0)")]
    DegenerateFeature { index: usize },

    #[error("{split} split received no patients")]
    SplitTooSmall { split: &'static str },

    #[error("class {class} is absent from the {split} split")]
    MissingClass { split: &'static str, class: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("model file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable code for each error category.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "data",
            Error::Parameter { .. } => "parameter",
            Error::SequenceTooShort { .. } => "sequence_too_short",
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::DegenerateFeature { .. } => "degenerate_feature",
            Error::SplitTooSmall { .. } => "split_too_small",
            Error::MissingClass { .. } => "missing_class",
            Error::Diverged { .. } => "training_diverged",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(op: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            expected,
            found,
        })
    }
}
