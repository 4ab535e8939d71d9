use std::io;

/// Errors produced while ingesting, building, opening or querying a store.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A coordinate fell outside the dataset grid.
    #[error("value {value} outside [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    /// A caller-supplied argument violates an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed XML in an mzXML stream.
    #[error("XML parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    /// Well-formed XML missing something the reader needs.
    #[error("schema error in scan {scan}: {message}")]
    Schema { scan: String, message: String },

    /// An mzXML feature outside the supported subset.
    #[error("unsupported feature: {0}")]
    Unsupported(String),

    /// Invalid Base64 text in a peaks element.
    #[error("base64 decode error: {0}")]
    Decode(String),

    /// Decoded peak bytes do not form whole (m/z, intensity) pairs.
    #[error("truncated peak array: {len} bytes is not a multiple of {pair} byte pairs")]
    Truncated { len: usize, pair: usize },

    /// Text that does not match an expected format.
    #[error("format error: {0}")]
    Format(String),

    /// On-disk bytes that fail validation.
    #[error("corrupt data at offset {offset}: {message}")]
    Corruption { offset: u64, message: String },

    /// Files from different builds were combined.
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn corruption(offset: u64, message: impl Into<String>) -> Self {
        Error::Corruption {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// Process exit code for command-line front ends: 1 usage, 2 data, 3 consistency.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Range { .. } | Error::InvalidArgument(_) => 1,
            Error::Consistency(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
