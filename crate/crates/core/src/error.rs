use thiserror::Error;

use crate::flow::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("finite point set is empty")]
    EmptySet,

    #[error("invalid set description: {0}")]
    InvalidSet(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bilinear projection failed: {0}")]
    BilinearRoot(String),

    #[error("bilinear block with nonnegativity has no feasible point for target {0} < 0")]
    InfeasibleBilinear(f64),

    #[error("operation not supported for this set kind: {0}")]
    Unsupported(String),

    #[error("projection is multivalued near the evaluation point (asymmetry {0:.3e})")]
    Multivalued(f64),

    #[error("not transversal: {0}")]
    NotTransversal(String),

    #[error("interface is not convergent: (n.v1)(n.v2) = {0:.3e} is not negative")]
    NonConvergent(f64),

    #[error("pair distances are not pairwise distinct (gap {0:.3e})")]
    DistinctnessViolated(f64),

    #[error("event budget of {budget} exhausted at t = {time}")]
    EventBudget {
        budget: usize,
        time: f64,
        partial: Box<Trajectory>,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}
