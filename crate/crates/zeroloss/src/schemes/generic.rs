//! Schemes defined directly on a loss L.

use std::sync::Arc;

use super::{DegenerateClass, DegenerateParts, NoisyLoss, SchemeTag};
use crate::losses::SharedLoss;
use crate::noise::{NoiseFamily, NoiseKind};
use crate::regularizers::{
    BernoulliDropConnectReg, CorrelatedReg, GaussianDropConnectReg, HalfLaplacian, Provenance, Regularizer, SharedReg,
};
use crate::{Matrix, ParamVector};

/// L̂(w, η) = L(w ⊙ (1 + η)).
#[derive(Clone)]
pub struct DropConnect {
    pub loss: SharedLoss,
}

impl DropConnect {
    pub fn new(loss: SharedLoss) -> Self {
        Self { loss }
    }
}

impl NoisyLoss for DropConnect {
    fn base(&self) -> SharedLoss {
        self.loss.clone()
    }
    fn noise_dim(&self) -> usize {
        self.loss.dim()
    }
    fn value(&self, w: &ParamVector, eta: &ParamVector) -> f64 {
        self.loss.value(&w.zip_map(eta, |a, e| a * (1.0 + e)))
    }
    fn grad_w(&self, w: &ParamVector, eta: &ParamVector) -> ParamVector {
        let scale = eta.map(|e| 1.0 + e);
        self.loss.gradient(&w.component_mul(&scale)).component_mul(&scale)
    }
    fn tag(&self) -> SchemeTag {
        SchemeTag::DropConnect
    }
    fn degenerate_class(&self) -> DegenerateClass {
        DegenerateClass::Nondegenerate
    }
    fn analytic_reg(&self, family: Option<&NoiseFamily>) -> Option<SharedReg> {
        match family.map(|f| &f.kind) {
            None | Some(NoiseKind::Gaussian { .. }) | Some(NoiseKind::Uniform { .. }) => {
                Some(Arc::new(GaussianDropConnectReg::new(self.loss.clone())))
            }
            Some(NoiseKind::BernoulliDropout { .. }) => Some(Arc::new(BernoulliDropConnectReg::new(self.loss.clone()))),
            _ => None,
        }
    }
}

/// L̂(w, η) = L(w + η). With correlated η ~ N(0, C) the regularizer becomes
/// ½∇²L : C.
#[derive(Clone)]
pub struct AntiPgd {
    pub loss: SharedLoss,
}

impl AntiPgd {
    pub fn new(loss: SharedLoss) -> Self {
        Self { loss }
    }
}

impl NoisyLoss for AntiPgd {
    fn base(&self) -> SharedLoss {
        self.loss.clone()
    }
    fn noise_dim(&self) -> usize {
        self.loss.dim()
    }
    fn value(&self, w: &ParamVector, eta: &ParamVector) -> f64 {
        self.loss.value(&(w + eta))
    }
    fn grad_w(&self, w: &ParamVector, eta: &ParamVector) -> ParamVector {
        self.loss.gradient(&(w + eta))
    }
    fn tag(&self) -> SchemeTag {
        SchemeTag::AntiPgd
    }
    fn degenerate_class(&self) -> DegenerateClass {
        DegenerateClass::Nondegenerate
    }
    fn analytic_reg(&self, family: Option<&NoiseFamily>) -> Option<SharedReg> {
        match family.map(|f| &f.kind) {
            Some(NoiseKind::GaussianCorrelated { covariance, .. }) => {
                // Normalized so that the drift reads −ασ̄²∇Reg with σ̄ the family sigma.
                let s2 = family.unwrap().sigma().powi(2);
                let c = if s2 > 0.0 { covariance / s2 } else { covariance.clone() };
                CorrelatedReg::new(self.loss.clone(), c)
                    .ok()
                    .map(|r| Arc::new(r) as SharedReg)
            }
            Some(NoiseKind::Concat(_)) => None,
            _ => Some(Arc::new(HalfLaplacian::new(self.loss.clone(), 0.5))),
        }
    }
}

/// L̂(w, η) = L(w) + ½ wᵀη.
#[derive(Clone)]
pub struct Sgld {
    pub loss: SharedLoss,
}

impl Sgld {
    pub fn new(loss: SharedLoss) -> Self {
        Self { loss }
    }
}

impl NoisyLoss for Sgld {
    fn base(&self) -> SharedLoss {
        self.loss.clone()
    }
    fn noise_dim(&self) -> usize {
        self.loss.dim()
    }
    fn value(&self, w: &ParamVector, eta: &ParamVector) -> f64 {
        self.loss.value(w) + 0.5 * w.dot(eta)
    }
    fn grad_w(&self, w: &ParamVector, eta: &ParamVector) -> ParamVector {
        self.loss.gradient(w) + eta * 0.5
    }
    fn tag(&self) -> SchemeTag {
        SchemeTag::Sgld
    }
    fn degenerate_class(&self) -> DegenerateClass {
        DegenerateClass::DegenerateQuadratic
    }
    fn degenerate_parts(&self) -> Option<&dyn DegenerateParts> {
        Some(self)
    }
}

impl DegenerateParts for Sgld {
    fn noise_dim(&self) -> usize {
        self.loss.dim()
    }
    fn f(&self, w: &ParamVector) -> ParamVector {
        w * 0.5
    }
    fn f_jacobian(&self, _w: &ParamVector) -> Matrix {
        let m = self.loss.dim();
        Matrix::identity(m, m) * 0.5
    }
    fn g(&self, _eta: &ParamVector) -> f64 {
        0.0
    }
}

/// L̂(w, η) = L(w) + ½ a(w) η² with scalar η and a(w) = 1 − c·cos(k·w₁).
///
/// Non-degenerate toy scheme on R²; its regularizer is ½a(w).
#[derive(Clone)]
pub struct ModulatedQuadratic {
    pub loss: SharedLoss,
    pub c: f64,
    pub k: f64,
}

impl ModulatedQuadratic {
    pub fn new(loss: SharedLoss, c: f64, k: f64) -> Self {
        Self { loss, c, k }
    }

    pub fn a(&self, w: &ParamVector) -> f64 {
        1.0 - self.c * (self.k * w[0]).cos()
    }

    fn grad_a(&self, w: &ParamVector) -> ParamVector {
        let mut g = ParamVector::zeros(w.len());
        g[0] = self.c * self.k * (self.k * w[0]).sin();
        g
    }
}

impl NoisyLoss for ModulatedQuadratic {
    fn base(&self) -> SharedLoss {
        self.loss.clone()
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn value(&self, w: &ParamVector, eta: &ParamVector) -> f64 {
        self.loss.value(w) + 0.5 * self.a(w) * eta[0] * eta[0]
    }
    fn grad_w(&self, w: &ParamVector, eta: &ParamVector) -> ParamVector {
        self.loss.gradient(w) + self.grad_a(w) * (0.5 * eta[0] * eta[0])
    }
    fn tag(&self) -> SchemeTag {
        SchemeTag::ModulatedQuadratic
    }
    fn degenerate_class(&self) -> DegenerateClass {
        DegenerateClass::Nondegenerate
    }
    fn analytic_reg(&self, _family: Option<&NoiseFamily>) -> Option<SharedReg> {
        Some(Arc::new(HalfModulation(self.clone())))
    }
}

struct HalfModulation(ModulatedQuadratic);

impl Regularizer for HalfModulation {
    fn value(&self, w: &ParamVector) -> f64 {
        0.5 * self.0.a(w)
    }
    fn gradient(&self, w: &ParamVector) -> ParamVector {
        self.0.grad_a(w) * 0.5
    }
    fn provenance(&self) -> Provenance {
        Provenance::AnalyticClosedForm
    }
    fn name(&self) -> String {
        "half-modulation".into()
    }
}

/// L̂(w, η) = L(w) + ½|w|² η with scalar η. Degenerate: f(w) = ½|w|².
#[derive(Clone)]
pub struct NormLinear {
    pub loss: SharedLoss,
}

impl NormLinear {
    pub fn new(loss: SharedLoss) -> Self {
        Self { loss }
    }
}

impl NoisyLoss for NormLinear {
    fn base(&self) -> SharedLoss {
        self.loss.clone()
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn value(&self, w: &ParamVector, eta: &ParamVector) -> f64 {
        self.loss.value(w) + 0.5 * w.norm_squared() * eta[0]
    }
    fn grad_w(&self, w: &ParamVector, eta: &ParamVector) -> ParamVector {
        self.loss.gradient(w) + w * eta[0]
    }
    fn tag(&self) -> SchemeTag {
        SchemeTag::NormLinear
    }
    fn degenerate_class(&self) -> DegenerateClass {
        DegenerateClass::DegenerateQuadratic
    }
    fn degenerate_parts(&self) -> Option<&dyn DegenerateParts> {
        Some(self)
    }
}

impl DegenerateParts for NormLinear {
    fn noise_dim(&self) -> usize {
        1
    }
    fn f(&self, w: &ParamVector) -> ParamVector {
        ParamVector::from_element(1, 0.5 * w.norm_squared())
    }
    fn f_jacobian(&self, w: &ParamVector) -> Matrix {
        Matrix::from_column_slice(w.len(), 1, w.as_slice())
    }
    fn g(&self, _eta: &ParamVector) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::check_scheme;
    use super::*;
    use crate::losses::RingSine;

    fn ring() -> SharedLoss {
        Arc::new(RingSine::default())
    }

    fn v(x: &[f64]) -> ParamVector {
        ParamVector::from_vec(x.to_vec())
    }

    #[test]
    fn invariants() {
        check_scheme(&DropConnect::new(ring()), 1, 1.5, 0.5);
        check_scheme(&AntiPgd::new(ring()), 2, 1.5, 0.5);
        check_scheme(&Sgld::new(ring()), 3, 1.5, 0.5);
        check_scheme(&ModulatedQuadratic::new(ring(), 0.7, 2.0), 4, 1.5, 0.5);
        check_scheme(&NormLinear::new(ring()), 5, 1.5, 0.5);
    }

    #[test]
    fn reference_values() {
        let dc = DropConnect::new(ring());
        let w = v(&[0.0, 1.0]);
        assert_eq!(dc.value(&w, &v(&[0.0, 1.0])), 0.36);
        let w = v(&[0.4, -0.7]);
        assert_eq!(dc.value(&w, &v(&[-1.0, -1.0])), ring().value(&v(&[0.0, 0.0])));

        let ap = AntiPgd::new(ring());
        assert_eq!(ap.value(&v(&[0.0, 1.0]), &v(&[0.0, -1.0])), 1.0);
        let reg = ap.analytic_reg(None).unwrap();
        assert!((reg.value(&v(&[0.0, 1.0])) - 1.0).abs() < 1e-12);

        let sg = Sgld::new(ring());
        let w = v(&[2.0, 0.0]);
        let eta = v(&[1.0, 1.0]);
        assert_eq!(sg.value(&w, &eta), ring().value(&w) + 1.0);
        assert_eq!(sg.grad_w(&w, &eta), ring().gradient(&w) + &eta * 0.5);
    }
}
