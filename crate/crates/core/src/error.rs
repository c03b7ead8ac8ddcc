//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`CwmError`]. Variants map
//! onto the failure families of the subsystems: simulation, persistence,
//! differentiation, and training.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CwmError {
    /// A world state violated its invariants (non-finite values, bad shapes).
    #[error("invalid world state: {0}")]
    InvalidState(String),

    /// An intervention was not applicable to the given state.
    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),

    /// Episode generation exhausted its retry budget.
    #[error("episode generation failed: {0}")]
    GenerationFailed(String),

    /// A puzzle placement action was rejected.
    #[error("invalid action: {0}")]
    InvalidAction(String),

    /// Underlying I/O failure while reading or writing artifacts.
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),

    /// Shapes, dimensions, or declared schemas disagree.
    #[error("schema error: {0}")]
    Schema(String),

    /// On-disk data failed validation (checksum, magic, truncation).
    #[error("corrupt data: {0}")]
    CorruptData(String),

    /// The file declares a format version this build does not understand.
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    /// A computation graph was malformed (unsupported op, shape mismatch).
    #[error("graph error: {0}")]
    Graph(String),

    /// A numeric quantity became NaN or infinite.
    #[error("numerics error: {0}")]
    Numerics(String),

    /// Propensity model misuse (degenerate density, too few samples).
    #[error("propensity error: {0}")]
    Propensity(String),

    /// Supervised training could not proceed (e.g. single-class labels).
    #[error("training error: {0}")]
    Training(String),
}

pub type Result<T> = std::result::Result<T, CwmError>;
