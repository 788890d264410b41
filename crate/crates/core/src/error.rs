//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("LAS header field `{field}` at byte offset {offset}: {message}")]
    LasHeader {
        field: &'static str,
        offset: usize,
        message: String,
    },

    #[error("unsupported LAS point data record format {format} (supported: 0, 1, 6, 7)")]
    UnsupportedPointFormat { format: u8 },

    #[error("input is LAZ-compressed; decompress to plain LAS before ingesting")]
    LazUnsupported,

    #[error("truncated LAS point block: expected {expected} bytes, found {actual}")]
    TruncatedPointBlock { expected: usize, actual: usize },

    #[error("point {index} lies outside the header bounds on {axis}: {value} not in [{min}, {max}]")]
    PointOutsideHeaderBounds {
        index: usize,
        axis: char,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("XYZ parse error at line {line}: {message}")]
    XyzParse { line: usize, message: String },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("degenerate bounds: {0}")]
    DegenerateBounds(String),

    #[error("point ({x}, {y}) is outside the grid coverage")]
    OutOfCoverage { x: f64, y: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("CRS mismatch: EPSG:{0} vs EPSG:{1}")]
    CrsMismatch(u32, u32),

    #[error("grids are not alignment-compatible: residual origin offset ({dx}, {dy}) in units of the coarser cell")]
    AlignmentResidual { dx: f64, dy: f64 },

    #[error("cell sizes do not have an exact integer ratio: {src} vs {target}")]
    NonIntegerCellRatio { src: f64, target: f64 },

    #[error("missing header key `{0}`")]
    MissingHeaderKey(String),

    #[error("malformed header value for `{key}`: {message}")]
    MalformedHeaderValue { key: String, message: String },

    #[error("raster payload length mismatch: expected {expected} bytes, found {actual}")]
    TruncatedRasterPayload { expected: usize, actual: usize },

    #[error("no valid pixels in the masked region")]
    NoValidPixels,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter {
        name: &'static str,
        message: String,
    },
}

impl Error {
    /// True for errors caused by unreadable or malformed inputs, as opposed
    /// to numeric/precondition failures on well-formed data. The CLI maps
    /// this distinction onto its exit codes.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::LasHeader { .. }
                | Error::UnsupportedPointFormat { .. }
                | Error::LazUnsupported
                | Error::TruncatedPointBlock { .. }
                | Error::PointOutsideHeaderBounds { .. }
                | Error::XyzParse { .. }
                | Error::MissingHeaderKey(_)
                | Error::MalformedHeaderValue { .. }
                | Error::TruncatedRasterPayload { .. }
        )
    }
}
