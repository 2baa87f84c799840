//! Noisy gradient descent near a manifold of global minimizers.
//!
//! The crate is organised bottom-up:
//!
//! - [`losses`]: smooth loss surfaces and supervised predictors.
//! - [`noise`]: noise families, reproducible random streams, moment checks.
//! - [`schemes`]: noise-injected losses `L̂(w, η)` with `L̂(w, 0) = L(w)`.
//! - [`geometry`]: Hessian spectral splits, projectors, the limit map `Φ`
//!   and its second derivative.
//! - [`dynamics`]: noisy GD, gradient flow, rescaled and shifted processes,
//!   constrained flows and SDEs on the zero-loss set.
//! - [`regularizers`]: implicit regularizers, drift probes, time-scale
//!   classification.

// `!(x < tol)` is used on purpose so that NaN takes the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod noise;
pub mod numdiff;
pub mod regularizers;
pub mod schemes;

pub use error::{Error, Result};

/// Point in parameter space.
pub type ParamVector = nalgebra::DVector<f64>;
/// Dense real matrix.
pub type Matrix = nalgebra::DMatrix<f64>;

/// Rejects vectors containing NaN or infinite entries.
pub fn check_finite(w: &ParamVector, what: &str) -> Result<()> {
    if w.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Rejects vectors of the wrong length.
pub fn check_dim(w: &ParamVector, expected: usize) -> Result<()> {
    if w.len() == expected {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got: w.len() })
    }
}
