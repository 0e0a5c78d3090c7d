//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Validation errors name the
//! violated assumption so that a failed precondition is diagnosable from the
//! message alone.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A structural precondition on an input failed (asymmetry, rank
    /// mismatch, spectrum separation, parameter ranges, ...). The message
    /// names the assumption that was violated.
    #[error("validation: {0}")]
    Validation(String),

    /// A state-preparation routine was asked to encode the zero vector.
    #[error("cannot prepare a state from a zero vector")]
    ZeroVector,

    /// An oracle was invoked on a branch whose column has zero norm.
    #[error("oracle query on zero-norm column {index}")]
    ZeroColumn { index: usize },

    /// Register lookup or dimension mismatch inside the statevector engine.
    #[error("register error: {0}")]
    Register(String),

    /// The joint state handed to the SVE channel is not (within tolerance)
    /// a combination of eigenvector blocks.
    #[error("state outside the eigen-block span (residual {residual:.3e})")]
    OutsideEigenSpan { residual: f64 },

    /// Gram–Schmidt hit a (numerically) dependent column set: Z^2 at or
    /// below the dependence tolerance.
    #[error("dependent columns: Z^2 = {z_sq:.3e} at row {row}")]
    DependentColumns { z_sq: f64, row: usize },

    /// A basis-selection round produced an index that is already in the set,
    /// or a post-selection probability collapsed to ~0.
    #[error("degenerate basis-selection round: {0}")]
    DegenerateRound(String),

    /// The estimated Gram system is too ill-conditioned for the requested
    /// tolerance regime.
    #[error("conditioning: {0}")]
    Conditioning(String),

    /// A linear solve or factorization broke down (singular pivot, residual
    /// check failure).
    #[error("numerical: {0}")]
    Numerical(String),

    /// Target-state generation ran out of iterations without matching the
    /// proper bin.
    #[error("target generation exhausted after {iterations} iterations")]
    TargetExhausted { iterations: u64 },

    /// The anchor scan's best squared overlap fell below the guaranteed
    /// floor `λ̃²/(2F²)`, signalling a corrupted target source.
    #[error("anchor scan floor violated: best = {best:.3e} < floor = {floor:.3e}")]
    AnchorFloor { best: f64, floor: f64 },

    /// I/O or serialization error surfaced through the CLI-facing paths.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
