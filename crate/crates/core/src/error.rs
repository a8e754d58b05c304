use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, MarketError>;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("volume {volume} exceeds baseline {baseline} of a producer without up-regulation")]
    InfeasibleVolume { volume: f64, baseline: f64 },

    #[error("covariance matrix is not positive semidefinite")]
    NotPsd,

    #[error("second-stage problem is unbounded")]
    UnboundedLp,

    #[error("second-stage problem is infeasible: surplus {surplus} exceeds down-regulation capacity {capacity}")]
    InfeasibleLp { surplus: f64, capacity: f64 },

    #[error("cutting planes did not converge after {cuts} cuts (gap {gap})")]
    NoConvergence { cuts: usize, gap: f64 },

    #[error("{n} producers exceed the enumeration bound of {max}")]
    TooManyProducers { n: usize, max: usize },

    #[error("invalid configuration: {}", join_violations(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("no counterfactual solution cached for producer {0}")]
    MissingCounterfactual(usize),

    #[error("scenario set is empty")]
    EmptyScenarioSet,

    #[error("dimension mismatch: expected {expected} producers, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
