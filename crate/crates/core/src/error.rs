use thiserror::Error;

/// Errors produced by the clustering, reward and experiment APIs.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KmeError {
    #[error("need at least 2 clusters, got k = {0}")]
    TooFewClusters(usize),

    #[error("dimension must be positive")]
    ZeroDimension,

    #[error("invalid hyperparameter {name}: {value}")]
    InvalidHyperparameter { name: &'static str, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in input vector")]
    NonFinite,

    #[error("cluster index {0} out of range")]
    IndexOutOfRange(usize),

    #[error("weighted pair distance needs two distinct clusters, got i = j = {0}")]
    SameCluster(usize),

    #[error("no commits recorded yet")]
    NoCommits,

    #[error("cluster {0} has zero estimated measure; increase the Monte-Carlo sample count")]
    ZeroMeasure(usize),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("closed-form entropy unavailable for {0}")]
    EntropyUnavailable(String),

    #[error("dimension {0} too large for a coverage grid (max 4)")]
    GridTooLarge(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, KmeError>;

pub(crate) fn check_vector(s: &[f64], d: usize) -> Result<()> {
    if s.len() != d {
        return Err(KmeError::DimensionMismatch {
            expected: d,
            got: s.len(),
        });
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(KmeError::NonFinite);
    }
    Ok(())
}
