use thiserror::Error;

/// Failure modes surfaced by model construction, fitting, and scoring.
///
/// Shape violations between matrices that were already validated together are
/// treated as program errors and panic instead of returning these variants.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SincError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("count column {0} is all zeros")]
    DegenerateColumn(usize),

    #[error("non-finite entry at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("non-finite result in {0}")]
    NonFiniteResult(&'static str),

    #[error("line search failed on latent row {0}")]
    LineSearchFailure(usize),

    #[error("singular block while updating precision column {0}")]
    SingularBlock(usize),

    #[error("degenerate denominator in {0} update")]
    DegenerateDenominator(&'static str),

    #[error("selection universes disagree: {0} items vs {1} items")]
    UniverseMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
