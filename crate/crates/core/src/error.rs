use thiserror::Error;

/// Errors surfaced by network construction, solvers, and reductions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node}: voltage must be positive, got {value}")]
    NonPositiveVoltage { node: usize, value: f64 },

    #[error("node ids must be dense 0..n-1; missing or out-of-range id {id}")]
    NonDenseIds { id: usize },

    #[error("line ({i},{k}): endpoints must differ")]
    SelfLoop { i: usize, k: usize },

    #[error("line ({i},{k}) references unknown node")]
    UnknownNode { i: usize, k: usize },

    #[error("duplicate line record for pair ({i},{k})")]
    DuplicateLine { i: usize, k: usize },

    #[error("no line between nodes {i} and {k}")]
    NoSuchLine { i: usize, k: usize },

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("node {node}: {name} must be positive, got {value}")]
    NonPositiveParam {
        node: usize,
        name: &'static str,
        value: f64,
    },

    #[error("node {node}: missing interface parameters")]
    MissingParams { node: usize },

    #[error("power flow did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("degenerate reduced Jacobian in Newton step (equilibrium on the boundary of the certified region)")]
    SingularJacobian,

    #[error("eigensolver failed: {context}")]
    EigenFailure { context: String },

    #[error("Kron pivot at node {node} is numerically singular (|Y_kk| = {magnitude:.3e})")]
    SingularPivot { node: usize, magnitude: f64 },

    #[error("passive-node block is singular at elimination step {step} (node {node})")]
    SingularPassiveBlock { step: usize, node: usize },

    #[error("invalid nu bounds: need 0 <= nu_min <= nu_max <= sqrt(1 + 2 nu_min^2), got ({nu_min}, {nu_max})")]
    InvalidNuBounds { nu_min: f64, nu_max: f64 },

    #[error("droop gain must be positive, got {value}")]
    NonPositiveDroopGain { value: f64 },

    #[error("invalid generator config: {context}")]
    InvalidConfig { context: String },

    #[error("could not generate a connected graph within {attempts} attempts")]
    ConnectivityRetryExhausted { attempts: usize },
}
