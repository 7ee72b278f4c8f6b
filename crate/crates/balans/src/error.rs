use thiserror::Error;

/// Errors surfaced by the correction pipeline.
#[derive(Debug, Error)]
pub enum BalansError {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("empty matrix: n and d must both be at least 1 (n = {n}, d = {d})")]
    EmptyMatrix { n: usize, d: usize },

    #[error("batch id {id} never occurs in the labels (B = {total})")]
    EmptyBatch { id: usize, total: usize },

    #[error("label id out of range: {id} not in 1..={max}")]
    LabelOutOfRange { id: usize, max: usize },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParam(String),

    #[error("batch {batch} has no candidate neighbors for anchor {anchor}")]
    NoBatchCandidates { anchor: usize, batch: usize },

    #[error(
        "zero local scale for anchor {anchor} in batch {batch}: all candidates are exact duplicates"
    )]
    ZeroScale { anchor: usize, batch: usize },

    #[error("no eligible index remains to sample: all {n} rows already drawn")]
    SamplingExhausted { n: usize },

    #[error("index {index} was already sampled")]
    DuplicateSample { index: usize },

    #[error("row {row} of the affinity matrix sums to zero; cannot normalize")]
    ZeroSumRow { row: usize },

    #[error("sampled-row count {m} exceeds the exact-Nystrom cap {cap}; use the smoothing path")]
    NystromCapExceeded { m: usize, cap: usize },

    #[error("zero MAD for feature {feature} in group {group}; filter the feature first")]
    ZeroMad { feature: usize, group: usize },

    #[error("group {group} has {got} control samples, need at least 2")]
    TooFewControls { group: usize, got: usize },

    #[error("metric requires at least 2 distinct labels, got {got}")]
    SingleLabel { got: usize },

    #[error("invalid neighborhood size {got} (must be in 1..{n})")]
    BadNeighborhood { got: usize, n: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed binary affinity dump: {0}")]
    BadBinary(String),
}

pub type Result<T> = std::result::Result<T, BalansError>;
