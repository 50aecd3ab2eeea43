//! On-disk formats: Middlebury flow files and PNG images/masks.
//!
//! Every decoder has a byte-slice entry point so it can be fuzzed without touching
//! the filesystem; the path-taking wrappers attach the path to any failure.

pub mod flo;
pub mod png;

use std::path::Path;

use crate::error::{Error, Result};

/// A decoding failure before a path is known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError(pub String);

impl FormatError {
    pub(crate) fn at(self, path: &Path) -> Error {
        Error::corrupt(path, self.0)
    }
}

/// A decoding failure for versioned formats, before a path is known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    Corrupt(String),
    Version { found: u32, expected: u32 },
}

impl DecodeError {
    pub fn at(self, path: &Path) -> Error {
        match self {
            DecodeError::Corrupt(reason) => Error::corrupt(path, reason),
            DecodeError::Version { found, expected } => Error::VersionMismatch {
                path: path.to_path_buf(),
                found,
                expected,
            },
        }
    }
}

impl std::fmt::Display for DecodeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeError::Corrupt(r) => write!(f, "{r}"),
            DecodeError::Version { found, expected } => {
                write!(f, "unsupported version {found} (expected {expected})")
            }
        }
    }
}

impl From<FormatError> for DecodeError {
    fn from(e: FormatError) -> Self {
        DecodeError::Corrupt(e.0)
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
