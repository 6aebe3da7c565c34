use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("metric is not symmetric positive definite at {point:?}")]
    NonSpd { point: Vec<f64> },

    /// The flowing curve reached a point where the metric is not SPD.
    #[error("curve left the valid chart at node {node} (tau = {tau:.6e}, point {point:?})")]
    ChartExit {
        node: usize,
        tau: f64,
        point: Vec<f64>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no convergence before tau = {max_tau} (last node change rate {rate:.3e})")]
    Diverged { max_tau: f64, rate: f64 },

    #[error("non-finite state at tau = {tau:.6e}")]
    NonFinite { tau: f64 },

    #[error("step size underflow at tau = {tau:.6e} (dtau = {dtau:.3e})")]
    StepSizeUnderflow { tau: f64, dtau: f64 },

    #[error("gradient descent hit max_iters = {iters} (gradient max-norm {grad_norm:.3e})")]
    MaxIters { iters: usize, grad_norm: f64 },

    #[error("line search stalled at iteration {iter} (gradient max-norm {grad_norm:.3e})")]
    LineSearchStalled { iter: usize, grad_norm: f64 },
}
