use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped so the CLI can map them onto exit codes: configuration
/// and data problems are caller errors, the rest are runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("joint set mismatch: expected {expected}, got {actual}")]
    JointSetMismatch { expected: String, actual: String },

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("degenerate skeleton: {0}")]
    Degenerate(String),

    #[error("unmapped classes: {}", .0.join(", "))]
    UnmappedClasses(Vec<String>),

    #[error("sequences without subject id: {}", .0.join(", "))]
    MissingSubject(Vec<String>),

    #[error("non-finite value in layer `{layer}`")]
    NonFinite { layer: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("stream error: {0}")]
    Stream(String),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad input data rather than a runtime fault.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::JointSetMismatch { .. }
                | Error::Shape { .. }
                | Error::Data(_)
                | Error::Degenerate(_)
                | Error::UnmappedClasses(_)
                | Error::MissingSubject(_)
                | Error::Checkpoint(_)
                | Error::Config { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
