use alloc::string::String;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid problem: {0}")]
    InvalidSpec(ValidationReport),
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("no unique stationary belief when lambda0 = 0 and lambda1 = 1")]
    NoStationaryBelief,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("value iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("reachable state space has {states} states, cap is {cap}; use a smaller truncation depth")]
    StateSpaceTooLarge { states: usize, cap: usize },
    #[error("LP too large: {what} = {value} exceeds cap {cap}")]
    LpTooLarge { what: &'static str, value: usize, cap: usize },
    #[error("LP is infeasible")]
    LpInfeasible,
    #[error("LP is unbounded")]
    LpUnbounded,
    #[error("simplex failed: {0}")]
    LpNumerical(String),
    #[error("value fields are defined on different grids")]
    GridMismatch,
    #[error("grid axes differ across dimensions")]
    AsymmetricGrid,
    #[error("structural violation: {0}")]
    StructuralViolation(String),
}
