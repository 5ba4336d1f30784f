use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("row {index} sums to {sum}, expected 1")]
    NonStochasticRow { index: usize, sum: f64 },
    #[error("entry ({row}, {col}) = {value} lies outside [0, 1]")]
    OutOfRangeEntry { row: usize, col: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid assignment weights: {0}")]
    InvalidWeights(String),
    #[error("class index {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("exhaustive alignment supports at most 8 modes, got {0}")]
    TooManyModes(usize),
    #[error("could not draw pairwise-distinct bases after {0} retries")]
    DegenerateBases(usize),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("momentum update requested during warm-up (epoch {epoch} < {warm_up})")]
    WarmUpActive { epoch: usize, warm_up: usize },
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}
