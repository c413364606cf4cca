use thiserror::Error;

use crate::pmp::Flow;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the set where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration diverged at t = {time}: {detail}")]
    Divergence { time: f64, detail: String },

    #[error("not found: {0}")]
    NotFound(String),

    /// Preconditions on arguments (grid sizes, sides, schedules) were violated.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    /// The backward flow branched more often than allowed. The branches
    /// completed so far are kept in `partial`.
    #[error("branch cap of {cap} exceeded while flowing from xi = {xi:?}")]
    BranchExplosion {
        xi: Vec<f64>,
        cap: usize,
        partial: Box<Flow>,
    },

    #[error("invalid input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::Estimation(_) | Error::BranchExplosion { .. }
        )
    }
}
