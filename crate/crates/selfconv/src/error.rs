//! Error types shared across the crate.

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A patch reference or region does not fit inside its container.
    #[error("out of bounds: {0}")]
    Bounds(String),
    /// Two operands have incompatible dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A file could not be parsed.
    #[error("format error: {0}")]
    Format(String),
    /// An invalid configuration value.
    #[error("config error: {0}")]
    Config(String),
    /// Non-finite values where finite arithmetic is required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A reference patch with zero norm cannot be NCC-normalized.
    #[error("degenerate patch: {0}")]
    DegeneratePatch(String),
    /// An inverse transform expected a real result but found a large
    /// imaginary residue; indicates a non-conjugate-symmetric spectrum.
    #[error("spectral residue: {0}")]
    SpectralResidue(String),
    /// Aggregation was asked to combine zero patches.
    #[error("empty aggregation")]
    EmptyAggregation,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
