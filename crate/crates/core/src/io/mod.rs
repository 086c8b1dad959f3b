//! Readers and writers for the on-disk formats: Middlebury `.flo` flow,
//! PFM float maps, TUM trajectories, and 8-bit PNG frames.
//!
//! All parsers return structured errors with byte or line positions and are
//! safe on arbitrary bytes (fuzzed); the float formats round-trip bit-exact.

mod flo;
mod pfm;
mod png;
mod tum;

pub use flo::{read_flo, read_flo_bytes, write_flo, write_flo_bytes};
pub use pfm::{read_pfm, read_pfm_bytes, write_pfm, write_pfm_bytes, PfmImage};
pub use png::{load_rgb8, save_gray8, save_rgb8};
pub use tum::{read_tum, read_tum_str, write_tum, write_tum_string};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoFormatError {
    #[error("{format}: bad magic at byte {offset}: expected {expected}, found {found}")]
    BadMagic {
        format: &'static str,
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("{format}: truncated at byte {offset}: needed {needed} more bytes")]
    Truncated {
        format: &'static str,
        offset: usize,
        needed: usize,
    },
    #[error("{format}: implausible dimensions {width}x{height} at byte {offset}")]
    BadDimensions {
        format: &'static str,
        offset: usize,
        width: i64,
        height: i64,
    },
    #[error("{format}: {msg} at byte {offset}")]
    Malformed {
        format: &'static str,
        offset: usize,
        msg: String,
    },
    #[error("TUM line {line}: {msg}")]
    BadLine { line: usize, msg: String },
    #[error("TUM line {line}: quaternion norm {norm} is not within 1e-6 of unit")]
    BadQuaternion { line: usize, norm: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl IoFormatError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> IoFormatError {
        IoFormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Hard cap on parsed image dimensions; anything larger is treated as a
/// corrupt header rather than an allocation request.
pub(crate) const MAX_DIM: usize = 1 << 15;
