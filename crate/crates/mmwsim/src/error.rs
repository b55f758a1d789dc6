//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A path loss was requested for a link in the outage state.
    #[error("no finite path loss in outage")]
    OutageLink,

    /// Covariance matrix with (numerically) zero trace.
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    /// Matrix / vector dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Requested subspace rank outside 1..=min(n_rx, n_tx).
    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    /// Angular power map with no validly detected cell.
    #[error("location in outage: no valid power cell in map")]
    MapInOutage,

    /// Not enough (or degenerate) data for a fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Iterative fit failed to converge.
    #[error("fit did not converge: {0}")]
    NoConvergence(String),

    /// Malformed configuration or data file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Deployment area cannot hold a single site.
    #[error("area too small for one site")]
    AreaTooSmall,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
