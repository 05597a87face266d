//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("state contains non-finite entries")]
    NonFiniteState,

    #[error("constraint matrix is rank-deficient (sigma_min/sigma_max = {ratio:.3e})")]
    SingularConstraint { ratio: f64 },

    #[error("state violates the constraint: residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    OffManifold { residual: f64, tol: f64 },

    #[error("saddle-point matrix is singular; constraint is degenerate at this state")]
    DegenerateSaddle,

    #[error("coordinate {value:.6} outside the profile domain [{lo:.6}, {hi:.6}]")]
    OutsideDomain { value: f64, lo: f64, hi: f64 },

    #[error("step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("maximum step count {max_steps} exceeded at t = {t:.6e}")]
    MaxStepsExceeded { max_steps: usize, t: f64 },

    #[error("trajectory diverged at t = {t:.6e}")]
    Diverged { t: f64 },

    #[error("angular velocity path undersampled: step*max|omega| = {product:.3} >= 0.5")]
    UndersampledOmega { product: f64 },

    #[error("no section return detected within the horizon {horizon:.3}")]
    PeriodNotDetected { horizon: f64 },

    #[error("finite differences unstable for integral jacobian (rel deviation {deviation:.3e})")]
    UnstableFiniteDifferences { deviation: f64 },

    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
