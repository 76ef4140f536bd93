use thiserror::Error;

/// Failures surfaced by the library. Every variant carries enough context to
/// name the violated precondition.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("disconnected interior: {components} components (sizes {sizes:?})")]
    Disconnected { components: usize, sizes: Vec<usize> },
    #[error("degenerate ball: no interior cell within r={radius} of ({x:.4},{y:.4},{z:.4})")]
    DegenerateBall { x: f64, y: f64, z: f64, radius: f64 },
    #[error("cells {from} and {to} are not connected through the interior")]
    Unreachable { from: usize, to: usize },
    #[error("generation range error: {0}")]
    Range(String),
    #[error("ellipticity violated at cell {cell}: {detail}")]
    Ellipticity { cell: usize, detail: String },
    #[error("pole rejected: {0}")]
    Pole(String),
    #[error("solver failure: {reason} (residual history {history:?})")]
    Solver { reason: String, history: Vec<f64> },
    #[error("maximum principle violated by {excess:.3e} at cell {cell}")]
    MaximumPrinciple { cell: usize, excess: f64 },
    #[error("density undefined: reference measure vanishes on boundary cell {0}")]
    DensityUndefined(usize),
    #[error("Whitney region tuning failed: {0}")]
    Tuning(String),
    #[error("resolution too coarse: {0}")]
    Resolution(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
