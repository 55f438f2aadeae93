use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate graph: node {node} has degree 0")]
    DegenerateGraph { node: usize },
    #[error("eigensolver did not converge (residual {residual:e} after {iterations} iterations)")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("edge density q = {q} exceeds 1")]
    InvalidDensity { q: f64 },
    #[error("contraction factor rho = {rho} is not below 1")]
    InvalidRatio { rho: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("fault budget exceeded: {requested} faulty nodes requested, budget {budget}")]
    BudgetExceeded { budget: usize, requested: usize },
    #[error("invalid delivery decision in round {round}: {reason}")]
    InvalidDecision { round: u64, reason: String },
    #[error("precondition unmet: {0}")]
    PreconditionUnmet(String),
    #[error("trace line {line}: {reason}")]
    Trace { line: usize, reason: String },
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
