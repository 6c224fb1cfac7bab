use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("numeric overflow: {0}")]
    Overflow(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty data set")]
    EmptyData,
    #[error("empty sample list")]
    EmptySamples,
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("invalid rank {rank} for a {d1}x{d2} matrix")]
    BadRank { rank: usize, d1: usize, d2: usize },
    #[error("design/arm index mismatch: {0}")]
    IndexMismatch(String),
    #[error("arm set does not span the matrix space (rank {rank} < {dim})")]
    SpanDeficient { rank: usize, dim: usize },
    #[error("solver did not converge after {iters} iterations (gap {gap:e})")]
    NonConvergence { iters: usize, gap: f64 },
    #[error("Hessian is singular or ill-conditioned (condition number {0:e})")]
    SingularHessian(f64),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("confidence level must lie in (0,1), got {0}")]
    BadConfidence(f64),
    #[error("regularization case does not fit the model: {0}")]
    CaseMismatch(String),
    #[error("bad sample budget: {0}")]
    BadBudget(String),
    #[error("arm index {index} out of range for {len} arms")]
    BadIndex { index: usize, len: usize },
    #[error("need at least {need} values, got {got}")]
    TooFewValues { need: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
