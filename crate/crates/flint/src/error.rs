//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlintError>;

#[derive(Debug, Error)]
pub enum FlintError {
    /// Normalization or parameter range is invalid (e.g. hi <= lo).
    #[error("invalid range: {0}")]
    InvalidRange(String),

    /// Input data contains NaN/inf or otherwise violates a data invariant.
    #[error("data error: {0}")]
    Data(String),

    /// Array shapes or channel counts do not match the operation contract.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Generic precondition violation of an operation contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Archive manifest fails schema or invariant validation.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Archive format version is not supported.
    #[error("unsupported archive version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    /// A file declared in a manifest is missing on disk.
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    /// Two writers target the same archive or the same (member, time, field) key.
    #[error("write conflict: {0}")]
    Conflict(String),

    /// Configuration is inconsistent (mode vs. data, architecture vs. shape, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A simulation or optimization produced non-finite values.
    #[error("diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    /// Two archives cannot be compared timestep-by-timestep.
    #[error("misaligned archives: offending indices {0:?}")]
    Misaligned(Vec<usize>),

    /// A metric could not be computed (e.g. external plugin missing).
    #[error("metric unavailable: {0}")]
    MetricUnavailable(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
