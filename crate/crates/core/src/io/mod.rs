//! On-disk formats for every pipeline artifact. Each writer has a reader
//! that returns an equal in-memory value.

pub mod binary;
pub mod image;
pub mod report;
pub mod text;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::StreamError;

pub use binary::{read_events, read_pairs, read_truth, write_events, write_pairs, write_truth};
pub use image::{read_ghost, read_mask, read_real, write_ghost, write_mask, write_real};
pub use report::{read_report, write_report, FitReport};
pub use text::{read_text, write_text};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("format version {0} is not supported")]
    VersionUnsupported(u16),
    #[error("file ends inside its header")]
    TruncatedHeader,
    #[error("file ends inside record {index}")]
    TruncatedRecord { index: u64 },
    #[error("header declares {declared} records but the file holds {found}")]
    CountMismatch { declared: u64, found: u64 },
    #[error("expected event kind {expected}, file holds kind {found}")]
    WrongKind { expected: u8, found: u8 },
    #[error("stored events are invalid: {0}")]
    Invalid(#[from] StreamError),
    #[error("count {0} does not fit a 16-bit image")]
    Overflow(u64),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

impl IoError {
    pub(crate) fn malformed(what: &'static str, detail: String) -> Self {
        IoError::Malformed { what, detail }
    }
}

/// Seed and configuration hash stamped into artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = toml::to_string(value).map_err(|e| IoError::malformed("toml", e.to_string()))?;
    Ok(std::fs::write(path, text)?)
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| IoError::malformed(what, e.to_string()))
}
