use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate ray: zero norm")]
    DegenerateRay,
    #[error("invalid viewport spec: {0}")]
    InvalidSpec(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("grid too dense: cell {cell_w}x{cell_h} px is smaller than twice the font size {font_px} px")]
    GridTooDense {
        cell_w: usize,
        cell_h: usize,
        font_px: u32,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid index {index} out of range 1..={max}")]
    BadIndex { index: i64, max: usize },
    #[error("routing reply selected no grid cells")]
    EmptyGridBoxes,
    #[error("unparseable model response: {0}")]
    UnparseableResponse(String),
    #[error("backend error (status {status}): {body}")]
    Backend { status: u16, body: String },
    #[error("backend timed out after {0:.2} s")]
    Timeout(f64),
    #[error("detector returned no boxes")]
    NoDetection,
    #[error("segmenter mask is {actual:?}, expected {expected:?}")]
    MaskDimMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
    #[error("grounding failed: {0}")]
    GroundingFailed(String),
    #[error("evaluation over zero samples")]
    EmptyEvaluation,
    #[error("dataset format error in record {id:?}: {reason}")]
    DatasetFormat { id: String, reason: String },
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Transport-level failures (as opposed to bad model output).
    pub fn is_backend_failure(&self) -> bool {
        matches!(self, Error::Backend { .. } | Error::Timeout(_))
    }
}
