use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Malformed model, policy, box or argument.
    #[error("configuration error: {0}")]
    Config(String),

    /// The linear system induced by the policy is singular or numerically so.
    #[error("policy is not proper: reciprocal condition estimate {rcond:.3e}")]
    Improper { rcond: f64 },

    #[error("value iteration did not converge in {iters} iterations (last update {residual:.3e})")]
    NotConverged { iters: usize, residual: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("action {action} is not feasible in state {state}")]
    InfeasibleAction { state: usize, action: usize },
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
