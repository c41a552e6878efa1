use crate::irreps::IrrepsError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("invalid molecule: {0}")]
    InvalidMolecule(String),
    #[error("atoms {0} and {1} are coincident")]
    CoincidentAtoms(usize, usize),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("distance {distance} exceeds cutoff {cutoff}")]
    BeyondCutoff { distance: f64, cutoff: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Irreps(#[from] IrrepsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
