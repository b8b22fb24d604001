use thiserror::Error;

use crate::simulate::SimulationResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("hybrid time ({t}, {j}) is not in the domain")]
    NotInDomain { t: f64, j: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("concatenation endpoints differ by {gap} (tolerance {tol})")]
    EndpointMismatch { gap: f64, tol: f64 },

    #[error("arc length {length} does not exceed tau = {tau}; nothing to split")]
    NothingToSplit { length: f64, tau: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("state left the guarded flow/jump sets at (k={k}, j={j})")]
    Escape {
        k: usize,
        j: usize,
        partial: Box<SimulationResult>,
    },

    #[error("empty value set at state {0:?}")]
    EmptyMap(Vec<f64>),

    #[error("horizon too short: {0}")]
    Horizon(String),

    #[error("unbounded values: {0}")]
    Unbounded(String),

    #[error("schedule is not admissible: {0}")]
    Schedule(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
