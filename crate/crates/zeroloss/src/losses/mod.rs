//! Smooth loss surfaces.
//!
//! A [`Loss`] bundles value, gradient and Hessian. Implementations with
//! closed-form derivatives override the finite-difference defaults.

mod mse;
mod predictors;
mod ring;

use std::sync::Arc;

pub use mse::{Dataset, MseLoss};
pub use predictors::{smooth_relu, smooth_relu_d1, smooth_relu_d2, DeepNet, OlmPredictor, Predictor, ShallowNet};
pub use ring::RingSine;

use crate::{numdiff, Matrix, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference { step: f64 },
}

pub trait Loss: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, w: &ParamVector) -> f64;

    fn gradient(&self, w: &ParamVector) -> ParamVector {
        numdiff::gradient(|x| self.value(x), w, numdiff::GRAD_STEP)
    }

    fn hessian(&self, w: &ParamVector) -> Matrix {
        match self.derivative_mode() {
            DerivativeMode::Analytic => numdiff::hessian_from_gradient(|x| self.gradient(x), w, numdiff::GRAD_STEP),
            DerivativeMode::FiniteDifference { .. } => {
                numdiff::hessian_from_value(|x| self.value(x), w, numdiff::HESS_STEP)
            }
        }
    }

    fn derivative_mode(&self) -> DerivativeMode;

    /// Exact distance to the zero set when it is known in closed form.
    fn zero_set_distance(&self, _w: &ParamVector) -> Option<f64> {
        None
    }

    fn name(&self) -> String;
}

pub type SharedLoss = Arc<dyn Loss>;

/// L(w) = ½ wᵀAw with A symmetric PSD. Constant Hessian, handy in tests.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub a: Matrix,
}

impl Quadratic {
    pub fn new(a: Matrix) -> Self {
        let a = (&a + a.transpose()) * 0.5;
        Self { a }
    }

    pub fn isotropic(dim: usize, lambda: f64) -> Self {
        Self::new(Matrix::identity(dim, dim) * lambda)
    }
}

impl Loss for Quadratic {
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn value(&self, w: &ParamVector) -> f64 {
        0.5 * w.dot(&(&self.a * w))
    }
    fn gradient(&self, w: &ParamVector) -> ParamVector {
        &self.a * w
    }
    fn hessian(&self, _w: &ParamVector) -> Matrix {
        self.a.clone()
    }
    fn derivative_mode(&self) -> DerivativeMode {
        DerivativeMode::Analytic
    }
    fn name(&self) -> String {
        "quadratic".into()
    }
}

/// Wraps a value-only closure; derivatives by finite differences.
pub struct FnLoss<F> {
    dim: usize,
    f: F,
    name: String,
}

impl<F: Fn(&ParamVector) -> f64 + Send + Sync> FnLoss<F> {
    pub fn new(dim: usize, name: &str, f: F) -> Self {
        Self {
            dim,
            f,
            name: name.to_string(),
        }
    }
}

impl<F: Fn(&ParamVector) -> f64 + Send + Sync> Loss for FnLoss<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, w: &ParamVector) -> f64 {
        (self.f)(w)
    }
    fn derivative_mode(&self) -> DerivativeMode {
        DerivativeMode::FiniteDifference {
            step: numdiff::GRAD_STEP,
        }
    }
    fn name(&self) -> String {
        self.name.clone()
    }
}
