use thiserror::Error;

use crate::flow::Trajectory;
use crate::prox::ProxReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("{0}")]
    InvalidParameter(String),

    #[error("subdifferential is set-valued at p=1; use the resolvent")]
    SetValuedSubgradient,

    #[error(
        "resolvent did not converge: gap {:.3e} after {} iterations",
        .0.final_gap, .0.iterations
    )]
    NotConverged(ProxReport),

    #[error("evolution aborted at step {step}: {source}")]
    Evolve {
        step: usize,
        partial: Box<Trajectory>,
        #[source]
        source: Box<Error>,
    },

    #[error("mismatched time grids")]
    TimeGridMismatch,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for solver non-convergence, including inside an evolution.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::NotConverged(_) => true,
            Error::Evolve { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
