use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SpineError>;

#[derive(Debug, Error)]
pub enum SpineError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// Malformed file content. `offset` is the byte offset where parsing failed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Well-formed file whose contents disagree with its declared structure.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty scan: every row is at or below the intensity threshold")]
    EmptyScan,

    #[error("no spine support: no row reaches the support threshold")]
    NoSpineSupport,

    #[error("degenerate baseline: percentile rows coincide at row {0}")]
    DegenerateBaseline(i64),

    #[error("degenerate angle: apex coincides with a segment endpoint")]
    DegenerateAngle,

    #[error("insufficient support: disk at row {center_row} with radius {radius} leaves the curve")]
    InsufficientSupport { center_row: f64, radius: f64 },

    #[error("degenerate split: one side of the disk has zero area")]
    DegenerateSplit,

    #[error("curve too short: {rows} rows cannot hold a probe of radius {radius}")]
    CurveTooShort { rows: usize, radius: f64 },

    #[error("empty curvature profile")]
    EmptyProfile,

    #[error("non-finite value in layer {layer}")]
    Numeric { layer: usize },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    /// A training sample that violates the data contract; `row` is 1-based
    /// and counts the header.
    #[error("invalid sample on row {row}: {message}")]
    InvalidSample { row: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SpineError {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        SpineError::Parse {
            offset,
            message: message.into(),
        }
    }
}
