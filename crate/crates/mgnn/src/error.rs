//! Error taxonomy shared by every module in the crate.
//!
//! Variants are grouped by failure class rather than by module so callers can
//! match on what went wrong (bad arguments, degenerate data, resource caps,
//! numeric blowup, file problems) without caring where it happened.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Arguments violate a documented precondition (shape mismatch, out-of-range
    /// parameter, missing metadata, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Input data is structurally valid but carries no usable information
    /// (e.g. all embeddings identical, so no kernel width can be inferred).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// Problem size exceeds a configured resource cap (e.g. the dense
    /// eigensolver limit).
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A forward pass produced a non-finite activation.
    #[error("non-finite activation in layer {layer}: {detail}")]
    NumericOverflow { layer: usize, detail: String },

    /// The training loss became non-finite.
    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    /// A computation could not meet its accuracy budget (e.g. quadrature
    /// re-projection residual too large for the requested tolerance).
    #[error("accuracy budget exceeded: {0}")]
    Accuracy(String),

    /// The spectrum-calibration guard of the convergence experiment failed;
    /// results would be misleading, so the run is aborted.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// Malformed input file. `location` pinpoints the failure as a byte
    /// offset (binary formats) or line number (text formats).
    #[error("parse error in {path} at {location}: {detail}")]
    Parse {
        path: String,
        location: String,
        detail: String,
    },

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand used by the parsers.
    pub(crate) fn parse(path: &str, location: String, detail: String) -> Self {
        Error::Parse {
            path: path.to_string(),
            location,
            detail,
        }
    }
}
