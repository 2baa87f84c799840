use super::{DerivativeMode, Loss};
use crate::{Matrix, ParamVector};

/// L(w) = ((|w|²−1)/(|w|²+1))² · (1 + a·sin(b·w₁)) on R².
///
/// The zero set is the unit circle. On it the Hessian is
/// 2(1 + a sin(b w₁))·n nᵀ with n the radial direction.
#[derive(Clone, Copy, Debug)]
pub struct RingSine {
    pub a: f64,
    pub b: f64,
}

impl Default for RingSine {
    fn default() -> Self {
        Self { a: 0.7, b: 5.0 }
    }
}

impl RingSine {
    fn radial(&self, s: f64) -> (f64, f64, f64) {
        let q = (s - 1.0) / (s + 1.0);
        let p1 = s + 1.0;
        let g = q * q;
        let g1 = 4.0 * (s - 1.0) / (p1 * p1 * p1);
        let g2 = 8.0 * (2.0 - s) / (p1 * p1 * p1 * p1);
        (g, g1, g2)
    }

    fn modulation(&self, w1: f64) -> (f64, f64, f64) {
        let (sn, cs) = (self.b * w1).sin_cos();
        (1.0 + self.a * sn, self.a * self.b * cs, -self.a * self.b * self.b * sn)
    }

    /// Regularizer ½ΔL restricted to the circle, as a function of the angle.
    pub fn half_laplacian_on_circle(&self, theta: f64) -> f64 {
        1.0 + self.a * (self.b * theta.cos()).sin()
    }

    /// d/dθ of [`Self::half_laplacian_on_circle`].
    pub fn half_laplacian_on_circle_deriv(&self, theta: f64) -> f64 {
        -self.a * self.b * (self.b * theta.cos()).cos() * theta.sin()
    }
}

impl Loss for RingSine {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, w: &ParamVector) -> f64 {
        let s = w[0] * w[0] + w[1] * w[1];
        let (g, _, _) = self.radial(s);
        g * self.modulation(w[0]).0
    }

    fn gradient(&self, w: &ParamVector) -> ParamVector {
        let s = w[0] * w[0] + w[1] * w[1];
        let (g, g1, _) = self.radial(s);
        let (m, m1, _) = self.modulation(w[0]);
        let mut out = w * (2.0 * g1 * m);
        out[0] += g * m1;
        out
    }

    fn hessian(&self, w: &ParamVector) -> Matrix {
        let s = w[0] * w[0] + w[1] * w[1];
        let (g, g1, g2) = self.radial(s);
        let (m, m1, m2) = self.modulation(w[0]);
        // ∇²g = 4g''wwᵀ + 2g'I, ∇g = 2g'w
        let mut h = (w * w.transpose()) * (4.0 * g2 * m);
        h[(0, 0)] += 2.0 * g1 * m;
        h[(1, 1)] += 2.0 * g1 * m;
        let dg = w * (2.0 * g1);
        h[(0, 0)] += 2.0 * m1 * dg[0];
        h[(0, 1)] += m1 * dg[1];
        h[(1, 0)] += m1 * dg[1];
        h[(0, 0)] += g * m2;
        h
    }

    fn derivative_mode(&self) -> DerivativeMode {
        DerivativeMode::Analytic
    }

    fn zero_set_distance(&self, w: &ParamVector) -> Option<f64> {
        Some((w.norm() - 1.0).abs())
    }

    fn name(&self) -> String {
        "ring-sine".into()
    }
}
