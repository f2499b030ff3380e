//! Crate-wide error type for shape and math precondition violations.

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by matrix, lowering, fitting, and pruning operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Two operands have incompatible shapes for the named operation.
    #[error(
        "{op}: shape mismatch, left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}"
    )]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// A constructor received dimensions or data of the wrong size.
    #[error("invalid dimensions: {rows}x{cols} with {len} entries")]
    InvalidDimensions {
        rows: usize,
        cols: usize,
        len: usize,
    },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// An operation required a square matrix.
    #[error("{op}: matrix must be square, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    /// The head count does not divide the feature dimension.
    #[error("head count {n_heads} does not divide feature dimension {d_model}")]
    HeadSplit { d_model: usize, n_heads: usize },

    /// A 1-based head index fell outside `1..=n_heads`.
    #[error("head index {index} out of range 1..={n_heads}")]
    HeadIndex { index: usize, n_heads: usize },

    /// A lowered operator would exceed the materialization cap.
    #[error("lowered operator size {size} exceeds the cap of {limit} (flattened length N*M)")]
    SizeLimit { size: usize, limit: usize },

    /// The normal equations (or QR factor) are numerically singular.
    #[error("linear system is singular or rank deficient; set ridge > 0 to regularize")]
    SingularSystem,

    /// The sample matrix does not span the input space.
    #[error("sample set is rank deficient; provide at least N linearly independent samples")]
    RankDeficientSamples,

    /// Pruning removed every term of a sigmoidal sum.
    #[error("pruning removed every term; raise the threshold or keep at least one term")]
    EmptyModel,

    /// A point or vector had the wrong length.
    #[error("{context}: dimension mismatch, expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A scalar parameter violated its precondition.
    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },
}
