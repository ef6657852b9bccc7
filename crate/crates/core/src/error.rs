use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed bracketed input.
    #[error("parse error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    /// No closed-vocabulary split could be drawn.
    #[error("no closed-vocabulary split found after {attempts} attempts; blocking words: {}", blocking.join(" "))]
    Split { attempts: usize, blocking: Vec<String> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown fragment key: {0}")]
    MissingKey(String),

    /// Malformed grammar, table or model file.
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("word {word:?} at position {position} is not covered by the grammar")]
    Coverage { word: String, position: usize },

    #[error("sentence has no parse")]
    NoParse,

    #[error("forest holds {count} derivations, more than the limit of {limit}")]
    TooManyDerivations { count: u128, limit: u128 },

    #[error("invalid derivation: {0}")]
    Derivation(String),

    #[error("missing rank for fragment {0}")]
    MissingRank(String),

    #[error("misuse: {0}")]
    Misuse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<Error>,
    },

    /// An experiment stage failed.
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    pub fn in_file(self, path: &std::path::Path) -> Self {
        Error::File {
            path: path.display().to_string(),
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
