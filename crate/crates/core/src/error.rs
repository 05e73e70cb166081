use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The window length violates the constraint epsilon <= (T - t0) /\ 1.
    #[error(
        "epsilon {epsilon} outside (0, (T - t0) /\\ 1] with t0 = {t0}, T = {horizon} \
         (small-horizon windows must satisfy epsilon <= (T - t0) /\\ 1)"
    )]
    EpsilonOutOfRange {
        epsilon: f64,
        t0: f64,
        horizon: f64,
    },

    /// A generator or coefficient returned a non-finite value.
    #[error("non-finite evaluation at t = {t}, y = {y}, |z| = {z_norm}: {what}")]
    NonFiniteEval {
        what: &'static str,
        t: f64,
        y: f64,
        z_norm: f64,
    },

    /// The regression normal matrix is numerically singular.
    #[error("singular regression at node {node} (condition number {condition:.3e})")]
    SingularRegression { node: usize, condition: f64 },

    /// A sampled-assumption check found counterexamples and the run was not forced.
    #[error("generator failed sampled {assumption} check with {n_violations} counterexample(s)")]
    ComplianceFailed {
        assumption: &'static str,
        n_violations: usize,
    },

    /// The requested computation exceeds the configured budget.
    #[error("cost estimate {estimate:.3e} evaluations exceeds budget {budget:.3e}")]
    BudgetExceeded { estimate: f64, budget: f64 },

    /// Explicit finite differences would violate the CFL stability bound.
    #[error("CFL violation: {steps} time steps requested, {required} required")]
    CflViolation { steps: usize, required: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
