//! Error type shared across the crate.

use alloc::string::String;

/// Everything that can go wrong when validating inputs or training.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("attention row {row} sums to {sum}, expected 1 within 1e-6")]
    NonStochasticRow { row: usize, sum: f64 },

    #[error("attention entry ({row}, {col}) = {value} outside [0, 1]")]
    WeightOutOfUnitRange { row: usize, col: usize, value: f64 },

    #[error("empty sequence where at least one element is required")]
    EmptySequence,

    #[error("{context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("near-zero norm ({norm}) in {side} representation")]
    DegenerateRepresentation { side: &'static str, norm: f64 },

    #[error("degenerate representation pair at sample {index}")]
    DegeneratePair { index: usize },

    #[error("log-prob row {row}: exponentials sum to {sum}, expected 1 within 1e-6")]
    InvalidLogProbs { row: usize, sum: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("label sequence contains the blank index {blank}")]
    BlankInLabels { blank: usize },

    #[error("{frames} frames cannot carry an extended label sequence needing {required}")]
    InfeasibleAlignment { frames: usize, required: usize },

    #[error("mixing weight {0} outside [0, 1]")]
    InvalidMixWeight(f64),

    #[error("negative loss weight {0}")]
    NegativeLambda(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: total loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("empty reference sequence")]
    EmptyReference,

    #[error("zero baseline CER in relative reduction")]
    ZeroBaseline,

    #[error("signal has zero power, cannot scale noise")]
    ZeroPowerSignal,
}

pub type Result<T> = core::result::Result<T, Error>;
