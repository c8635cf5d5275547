use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("measures live on different grids")]
    GridMismatch,

    #[error("operation requires a {expected}-dimensional grid, got dimension {got}")]
    Dimension { expected: usize, got: usize },

    #[error("support size {rows}x{cols} exceeds the exact solver cap {cap}x{cap}; use sinkhorn instead")]
    SupportCap { rows: usize, cols: usize, cap: usize },

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("inconsistent transport plan: {0}")]
    InconsistentPlan(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("vacuous rate bound: {0}")]
    VacuousRate(String),

    #[error("functional check failed: {0}")]
    Functional(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
