use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Error, Serialize)]
#[serde(tag = "error", content = "detail")]
pub enum OpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("basis is linearly dependent (rank {rank} < {dim})")]
    LinearlyDependentBasis { rank: usize, dim: usize },
    #[error("ill-conditioned system (condition number {0:e})")]
    IllConditioned(f64),
    #[error("level {level} exceeds the level cap {cap}")]
    LevelExceeded { level: usize, cap: usize },
    #[error("could not draw an independent basis after {0} attempts")]
    RandomnessExhausted(usize),
    #[error("map is not injective (smallest singular value {0:e})")]
    NotInjective(f64),
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("scale must be positive, got {0}")]
    NonpositiveScale(f64),
    #[error("kernel is not a subspace of the parent: {0}")]
    KernelNotSubspace(String),
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("no contractive extension certified: {0}")]
    ExtensionFailure(String),
    #[error("tuples are not comparable: lengths {0} and {1}")]
    NotAuerbachComparable(usize, usize),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, OpError>;
