//! Error taxonomy shared across the crate.
//!
//! The variants mirror the failure modes the CLI distinguishes by exit code:
//! invalid inputs, uncertified hypotheses, and conclusion violations (which
//! indicate a bug or a broken invariant, never an expected outcome).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the mathematical domain failed (unknown point,
    /// mismatched spaces, parameter out of range).
    #[error("domain error: {0}")]
    Domain(String),

    /// Operand shapes are incompatible (wrong dimension, wrong fiber).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A file or serialized artifact failed validation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A hypothesis that must be certified numerically before a lemma check
    /// can run failed its certificate. The message names the failing bound.
    #[error("uncertified hypothesis: {0}")]
    Uncertified(String),

    /// A certified run violated the conclusion it guarantees. This should
    /// never occur; it indicates a defect.
    #[error("conclusion violated: {0}")]
    ConclusionViolated(String),

    /// An iterative numerical routine failed to converge. Carries the best
    /// bracket known at abort time.
    #[error("numeric failure: {msg} (bracket [{lo}, {hi}])")]
    Numeric { msg: String, lo: f64, hi: f64 },

    /// The target vector is not in the convex hull of the measure's range.
    /// Carries a separating functional as witness: `functional . v` exceeds
    /// the support function of the zonotope by `margin`.
    #[error("target not in convex hull (separation margin {margin})")]
    NotInHull { functional: Vec<f64>, margin: f64 },

    /// "Cannot happen" state reached; the message cites the violated
    /// mathematical guarantee.
    #[error("internal invariant violation: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}
