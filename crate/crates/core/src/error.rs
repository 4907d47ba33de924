//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by estimation building blocks.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A series/iteration did not reach its tolerance within the term budget.
    #[error("series did not converge within {max_terms} terms (last term {last_term:.3e})")]
    SeriesDivergence { max_terms: usize, last_term: f64 },

    /// A sample falls outside the representable support window.
    #[error("sample {value} outside support range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    /// Mismatched vector/matrix dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The support grid is too short for the requested dictionary.
    #[error("support grid too short: {required} rows required for the tail bound, only {actual} available")]
    GridTooShort { required: usize, actual: usize },

    /// A cumulative-summation search hit its iteration cap.
    #[error("tail quantile search exceeded cap of {cap} terms")]
    QuantileCap { cap: usize },

    /// An operation that needs a non-empty support received an empty one.
    #[error("empty support")]
    EmptySupport,

    /// The unity-repair scale search exhausted its doubling budget.
    #[error("unity repair search exceeded {0} scale doublings")]
    RepairSearch(usize),

    /// Invalid configuration or input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
