use std::io;

use thiserror::Error;

/// Errors surfaced by the allocator and its configuration.
#[derive(Debug, Error)]
pub enum AllocError {
    /// Zero-byte requests are rejected instead of rounded up.
    #[error("zero-byte requests are not supported")]
    ZeroSize,
    #[error("size class {0} is out of range")]
    InvalidClass(usize),
    /// Persistent allocations are restricted to the size-class range.
    #[error("persistent allocation of {0} bytes exceeds the largest size class")]
    UnsupportedSize(usize),
    #[error("invalid size-class table: {0}")]
    InvalidTable(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{op} failed: {source}")]
    Os {
        op: &'static str,
        #[source]
        source: io::Error,
    },
}

impl AllocError {
    pub(crate) fn last_os(op: &'static str) -> Self {
        AllocError::Os {
            op,
            source: io::Error::last_os_error(),
        }
    }

    pub fn is_out_of_memory(&self) -> bool {
        matches!(self, AllocError::Os { .. })
    }
}

/// Unrecoverable allocator misuse or OS failure on a path that cannot
/// report errors (free, retirement). Prints a diagnostic and aborts.
#[cold]
pub(crate) fn fatal(msg: std::fmt::Arguments<'_>) -> ! {
    eprintln!("oamalloc: fatal: {msg}");
    std::process::abort()
}
