use std::io;
use std::path::PathBuf;

/// Errors produced by the corpus pipeline.
///
/// Variants fall into three broad classes that the CLI maps onto exit codes:
/// configuration/usage problems, bad input data, and internal consistency
/// failures. See [`Error::class`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate document id {id:?} ({path}:{line})")]
    DuplicateId {
        id: String,
        path: PathBuf,
        line: usize,
    },

    #[error("document {id:?} is empty")]
    EmptyDocument { id: String },

    #[error("document {id:?}: {message}")]
    Format { id: String, message: String },

    #[error("ARPA parse error at line {line}: {message}")]
    Arpa { line: usize, message: String },

    #[error("count shard: {0}")]
    Shard(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact {artifact} (produce it with `softdedup {producer}`)")]
    MissingArtifact {
        artifact: PathBuf,
        producer: &'static str,
    },

    #[error("degenerate commonness spread: p_1 = p_K = {0}, no exponent gives a ratio above 1")]
    DegenerateSpread(f64),

    #[error("tokenizer fingerprint mismatch: {left} vs {right}")]
    FingerprintMismatch { left: String, right: String },

    #[error("report does not match corpus: expected digest {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },

    #[error("document {0:?} referenced but not present in corpus")]
    UnknownDocument(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),
}

/// Coarse error classification, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Internal,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::MissingArtifact { .. } | Error::DegenerateSpread(_) => {
                ErrorClass::Usage
            }
            Error::Consistency(_) => ErrorClass::Internal,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
