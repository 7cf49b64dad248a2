use thiserror::Error;

/// Errors raised by the solvers in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("density has non-positive mass {0}")]
    ZeroMass(f64),

    #[error("negative or non-finite value {value} at node {node}")]
    InvalidValue { node: usize, value: f64 },

    #[error("point {point} lies outside [{lower}, {upper}]")]
    OutOfDomain { point: f64, lower: f64, upper: f64 },

    #[error("cosine series needs more than {limit} terms at t = {t}; use the image sum")]
    Diverged { t: f64, limit: usize },

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),

    #[error("proximal step did not converge: residual {residual:e} after {iterations} iterations")]
    ProxNoConverge { residual: f64, iterations: usize },

    #[error("densities live on different grids")]
    DomainMismatch,

    #[error("non-positive value {value} at node {node}")]
    NonPositive { node: usize, value: f64 },

    #[error("{floored} of {support} support nodes needed flooring during Hadamard division")]
    FloorDominant { floored: usize, support: usize },

    #[error("fixed point not reached after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("control queried at {0:?}, outside its domain")]
    ControlOutOfRange(Vec<f64>),

    #[error("engine does not match the drift: {0}")]
    EngineMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
