//! File formats and command-line pipeline around `ehrcomp-core`.
//!
//! A corpus on disk is a directory with one CSV per table, a definition
//! table, labels and a `schema.toml` sidecar. Token streams are JSON lines,
//! vocabularies are one unit per line, and every command leaves a
//! `manifest.json` with content digests of what it read and wrote.

pub mod cli;
pub mod corpus_io;
pub mod formats;
pub mod fsio;
pub mod manifest;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}, column `{column}`: {message}")]
    Cell {
        path: PathBuf,
        line: u64,
        column: String,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] ehrcomp_core::corpus::CorpusError),
    #[error(transparent)]
    Serialize(#[from] ehrcomp_core::serializer::SerializeError),
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        IoError::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
