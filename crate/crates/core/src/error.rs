use thiserror::Error;

use crate::trajectory::Trajectory;

/// Everything that can go wrong inside the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid size {0}: must be a power of two and at least 8")]
    InvalidGridSize(usize),

    #[error("non-finite value {value} at grid index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("grid mismatch: {left} points vs {right} points")]
    GridMismatch { left: usize, right: usize },

    #[error("derivative order {0} outside 1..=5")]
    DerivativeOrder(u32),

    #[error("Sobolev index {0} outside [-10, 10]")]
    SobolevIndex(f64),

    #[error("field is not mean-zero: mean {mean:e} with L2 norm {l2:e}")]
    NotMeanZero { mean: f64, l2: f64 },

    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("{what} under-resolved: support spans {support_cells:.2} cells (< 4), need N >= {required_n}")]
    UnderResolved {
        what: &'static str,
        support_cells: f64,
        required_n: usize,
    },

    #[error("value {value} at index {index} outside the admissible interval [-{bound}, {bound}]")]
    Inadmissible { index: usize, value: f64, bound: f64 },

    #[error("mobility weight {weight:e} below floor at t = {time}, grid index {index}")]
    WeightBelowFloor { time: f64, index: usize, weight: f64 },

    #[error("residual is not mean-zero ({mean:e}); mass leaks upstream")]
    ResidualMass { mean: f64 },

    #[error("numerical abort at step {step} (t = {time}): {reason}")]
    Abort {
        step: usize,
        time: f64,
        reason: String,
        /// Snapshots up to and including the last finite state.
        last_good: Box<Trajectory>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
