use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("incompatible: {0}")]
    Incompatible(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Ticket(#[from] TicketFormatError),

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while reading an `.eltk` ticket file.
#[derive(Debug, Error)]
pub enum TicketFormatError {
    #[error("bad magic bytes {found:?}, expected \"ELTK\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported ticket format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated ticket file: {0}")]
    Truncated(String),

    #[error("payload checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("malformed ticket header: {0}")]
    Header(String),
}

/// Failures while parsing an on-disk dataset.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        file: String,
        found: u32,
        expected: u32,
    },

    #[error("{file}: truncated, expected {expected} bytes but found {found}")]
    Truncated {
        file: String,
        expected: usize,
        found: usize,
    },

    #[error("{file}: {extra} unexpected trailing bytes after {expected} bytes of data")]
    TrailingBytes {
        file: String,
        expected: usize,
        extra: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{file}: record misaligned at byte offset {offset} (record size {record})")]
    Misaligned {
        file: String,
        offset: usize,
        record: usize,
    },

    #[error("{file}: label {label} out of range at record {index}")]
    LabelRange {
        file: String,
        label: usize,
        index: usize,
    },

    #[error("missing dataset file {0}")]
    Missing(PathBuf),
}
