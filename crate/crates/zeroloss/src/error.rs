use thiserror::Error;

use crate::dynamics::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("not available: {0}")]
    NotAvailable(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("ambiguous spectral gap: eigenvalue {eigenvalue:e} lies within [δ/2, 2δ] of δ = {delta:e}")]
    AmbiguousGap { eigenvalue: f64, delta: f64 },
    #[error("point is off the zero-loss manifold: |∇L| = {grad_norm:e} exceeds {tol:e}")]
    OffManifold { grad_norm: f64, tol: f64 },
    #[error("gradient flow did not reach the manifold: {0}")]
    NonAttracted(String),
    #[error("iterates diverged at step {step} (|w| = {norm:e})")]
    Diverged {
        step: usize,
        norm: f64,
        partial: Box<Trajectory>,
    },
    #[error("step size underflow at t = {t:e} (stiff problem?)")]
    Stiffness { t: f64 },
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("scheme error: {0}")]
    Scheme(String),
}
