use thiserror::Error;

/// Errors raised by the simulator and the statistical layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid needs at least 8 cells, got {0}")]
    GridTooSmall(usize),

    #[error("cell width 1/{0} does not satisfy dx * n_cells == 1 in this arithmetic")]
    GridSpacingInexact(usize),

    #[error("{what}: expected length {expected}, got {got}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-positive density {value} in cell {cell}")]
    NonPositiveDensity { cell: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("velocity must vanish at both boundary faces (got {left}, {right})")]
    BoundaryVelocity { left: f64, right: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("CFL number {cfl} exceeds the limit {limit}")]
    Cfl { cfl: f64, limit: f64 },

    #[error("tridiagonal solve broke down at row {row} (pivot {pivot})")]
    TridiagonalBreakdown { row: usize, pivot: f64 },

    #[error("step {step} failed: {source}")]
    Step {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory {id} failed: {source}")]
    Trajectory {
        id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("states live on different grids ({0} vs {1} cells)")]
    GridMismatch(usize, usize),

    #[error("record does not cover the requested span: {0}")]
    Span(String),

    #[error("noise amplitude is zero; the martingale rate is undefined")]
    DegenerateNoise,

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
