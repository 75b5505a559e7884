use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Structural problems found while decoding a binary file.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic {found:?} at byte 0 (expected {expected:?})")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported version {0} at byte 4")]
    UnsupportedVersion(u32),
    #[error("file truncated at byte {offset} while reading {what}")]
    Truncated { offset: u64, what: &'static str },
    #[error("unknown label kind {value} at byte {offset}")]
    BadLabelKind { value: u8, offset: u64 },
    #[error("non-zero reserved bytes at byte {offset}")]
    ReservedNonZero { offset: u64 },
    #[error("id at byte {offset} is not valid UTF-8")]
    InvalidUtf8 { offset: u64 },
    #[error("{matrix} embedding entry at byte {offset} is not finite")]
    NonFiniteEmbedding { matrix: &'static str, offset: u64 },
    #[error("record {record} ({side} index {index}) out of range 0..{bound} at byte {offset}")]
    IndexOutOfRange {
        record: u64,
        side: &'static str,
        index: u32,
        bound: u32,
        offset: u64,
    },
    #[error("record {record} has bad split tag {value} at byte {offset}")]
    BadSplitTag { record: u64, value: u8, offset: u64 },
    #[error("record {record} has invalid label {value} at byte {offset}")]
    BadLabel {
        record: u64,
        value: f32,
        offset: u64,
    },
    #[error("record {record} duplicates pair ({drug}, {prot}) within its split at byte {offset}")]
    DuplicatePair {
        record: u64,
        drug: u32,
        prot: u32,
        offset: u64,
    },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(u64),
    #[error("section {tag:?} is malformed: {reason}")]
    BadSection { tag: String, reason: String },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("negative sampling failed: {0}")]
    Sampling(String),
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("unknown {kind} id {id:?}; nearest: {nearest:?}")]
    Lookup {
        kind: &'static str,
        id: String,
        nearest: Vec<String>,
    },
    #[error("non-finite loss at step {step} (records {records:?})")]
    NumericalAbort { step: u64, records: Vec<String> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            got,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 usage, 3 data/validation, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Parameter(_) => 2,
            Error::NumericalAbort { .. } | Error::NonFinite(_) => 4,
            _ => 3,
        }
    }
}
