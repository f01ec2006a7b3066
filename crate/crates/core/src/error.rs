use thiserror::Error;

/// Errors raised by the geometry, weight, projector and solver layers.
///
/// Every variant carries a stable machine-readable code (see [`CtError::code`])
/// that the command line front-end prints on failure.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("ray parallel to voxel face: {0}")]
    RayParallelToFace(String),
    #[error("gantry angle too close to the singular branch (|sin phi| = {0:e})")]
    SingularPhi(f64),
    #[error("detector row m_z = 0 has no finite top-plane factors")]
    CentralRow,
    #[error(
        "voxel {voxel} touches {rows} detector rows at angle index {angle} (at most 3 allowed)"
    )]
    ZRestrictionViolation {
        voxel: usize,
        angle: usize,
        rows: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("system matrix would need about {rows} rows x {nnz_estimate} nonzeros")]
    OutOfMemory { rows: usize, nnz_estimate: usize },
    #[error("matrix has no nonzero entries")]
    ZeroMatrix,
    #[error("iterate became non-finite at iteration {0}")]
    NonFinite(usize),
    #[error("dense reference limited to 10000 x 10000, got {rows} x {cols}")]
    TooLarge { rows: usize, cols: usize },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CtError {
    pub fn code(&self) -> &'static str {
        match self {
            CtError::DegenerateGeometry(_) => "E_DEGENERATE_GEOMETRY",
            CtError::RayParallelToFace(_) => "E_RAY_PARALLEL",
            CtError::SingularPhi(_) => "E_SINGULAR_PHI",
            CtError::CentralRow => "E_CENTRAL_ROW",
            CtError::ZRestrictionViolation { .. } => "E_Z_RESTRICTION",
            CtError::DimensionMismatch { .. } => "E_DIMENSION_MISMATCH",
            CtError::OutOfMemory { .. } => "E_OUT_OF_MEMORY",
            CtError::ZeroMatrix => "E_ZERO_MATRIX",
            CtError::NonFinite(_) => "E_NON_FINITE",
            CtError::TooLarge { .. } => "E_TOO_LARGE",
            CtError::InvalidGeometry(_) => "E_INVALID_GEOMETRY",
            CtError::InvalidSpec(_) => "E_INVALID_SPEC",
            CtError::InvalidConfig(_) => "E_INVALID_CONFIG",
            CtError::Format(_) => "E_FORMAT",
            CtError::Io(_) => "E_IO",
        }
    }
}

impl From<std::io::Error> for CtError {
    fn from(e: std::io::Error) -> Self {
        CtError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CtError>;
