use thiserror::Error;

/// Errors produced by the loop-space, functional, and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid delay: {steps} steps on a grid of {grid_size} points")]
    InvalidDelay { steps: usize, grid_size: usize },

    #[error("grid too coarse: {grid_size} points, need at least {min}")]
    GridTooCoarse { grid_size: usize, min: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("interaction matrix is not skew-symmetric at ({i},{j})")]
    NotSkewSymmetric { i: usize, j: usize },

    #[error("solver breakdown: {0}")]
    SolverBreakdown(String),

    #[error("trajectory blow-up at step {step}")]
    BlowUp { step: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown model id: {0}")]
    UnknownModel(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
