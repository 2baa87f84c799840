//! Central finite differences.
//!
//! Used as a fallback for losses without analytic derivatives and as the
//! oracle in derivative checks.

use crate::{Matrix, ParamVector};

pub const GRAD_STEP: f64 = 1e-5;
pub const HESS_STEP: f64 = 1e-3;
pub const THIRD_STEP: f64 = 1e-4;

pub fn gradient<F: Fn(&ParamVector) -> f64>(f: F, w: &ParamVector, h: f64) -> ParamVector {
    let mut g = ParamVector::zeros(w.len());
    let mut x = w.clone();
    for i in 0..w.len() {
        let wi = w[i];
        x[i] = wi + h;
        let fp = f(&x);
        x[i] = wi - h;
        let fm = f(&x);
        x[i] = wi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Jacobian of a vector field, column j = ∂F/∂w_j.
pub fn jacobian<F: Fn(&ParamVector) -> ParamVector>(f: F, w: &ParamVector, h: f64) -> Matrix {
    let n = w.len();
    let mut x = w.clone();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let wj = w[j];
        x[j] = wj + h;
        let fp = f(&x);
        x[j] = wj - h;
        let fm = f(&x);
        x[j] = wj;
        cols.push((fp - fm) / (2.0 * h));
    }
    Matrix::from_columns(&cols)
}

/// Hessian from a gradient, symmetrized.
pub fn hessian_from_gradient<F: Fn(&ParamVector) -> ParamVector>(grad: F, w: &ParamVector, h: f64) -> Matrix {
    let j = jacobian(grad, w, h);
    (&j + j.transpose()) * 0.5
}

/// Hessian from second differences of values.
pub fn hessian_from_value<F: Fn(&ParamVector) -> f64>(f: F, w: &ParamVector, h: f64) -> Matrix {
    let n = w.len();
    let mut hm = Matrix::zeros(n, n);
    let mut x = w.clone();
    let f0 = f(w);
    for i in 0..n {
        x[i] = w[i] + h;
        let fp = f(&x);
        x[i] = w[i] - h;
        let fm = f(&x);
        x[i] = w[i];
        hm[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let mut s = 0.0;
            for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                x[i] = w[i] + si * h;
                x[j] = w[j] + sj * h;
                s += sign * f(&x);
            }
            x[i] = w[i];
            x[j] = w[j];
            let v = s / (4.0 * h * h);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    hm
}

/// Relative error ‖a − b‖ / max(‖b‖, floor).
pub fn rel_err(a: &ParamVector, b: &ParamVector, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}
