use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed MIDI at byte {offset}: {message}")]
    MidiParse { offset: usize, message: String },

    #[error("piece `{source_id}` is not eligible for scoring: {reason}")]
    IneligiblePiece { source_id: String, reason: String },

    #[error("cannot encode a sequence without notes")]
    EmptySequence,

    #[error("invalid event sequence at index {index}: {reason}")]
    Structure { index: usize, reason: String },

    #[error("{stream} has {notes} note events but burn-in is {burn_in}")]
    TooShort {
        stream: String,
        notes: usize,
        burn_in: usize,
    },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("invalid model file: {0}")]
    ModelFormat(String),

    #[error("stationary distribution not found: {0}")]
    NonConvergent(String),

    #[error("invalid joint Markov spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    TextFormat { line: usize, message: String },

    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn midi(offset: usize, message: impl Into<String>) -> Self {
        Error::MidiParse {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn structure(index: usize, reason: impl Into<String>) -> Self {
        Error::Structure {
            index,
            reason: reason.into(),
        }
    }

    pub(crate) fn text(line: usize, message: impl Into<String>) -> Self {
        Error::TextFormat {
            line,
            message: message.into(),
        }
    }
}
