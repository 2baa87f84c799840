//! Noise-injected losses L̂(w, η) with L̂(w, 0) = L(w).

mod dropout;
mod generic;
mod supervised;

use std::sync::Arc;

pub use dropout::{DropoutDeep, DropoutOlm, DropoutShallow, OlmDropoutReg, ShallowDropoutReg};
pub use generic::{AntiPgd, DropConnect, ModulatedQuadratic, NormLinear, Sgld};
pub use supervised::{CombinedConstant, LabelNoise, LabelPlusMinibatch, Minibatch};

use crate::losses::SharedLoss;
use crate::noise::NoiseFamily;
use crate::regularizers::SharedReg;
use crate::{numdiff, Matrix, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeTag {
    DropConnect,
    AntiPgd,
    Sgld,
    LabelNoise,
    Minibatch,
    LabelPlusMinibatch,
    DropoutOlm,
    DropoutShallow,
    DropoutDeep,
    ModulatedQuadratic,
    NormLinear,
}

impl SchemeTag {
    pub fn id(&self) -> &'static str {
        match self {
            SchemeTag::DropConnect => "drop-connect",
            SchemeTag::AntiPgd => "anti-pgd",
            SchemeTag::Sgld => "sgld",
            SchemeTag::LabelNoise => "label-noise",
            SchemeTag::Minibatch => "minibatch",
            SchemeTag::LabelPlusMinibatch => "label+minibatch",
            SchemeTag::DropoutOlm => "dropout-olm",
            SchemeTag::DropoutShallow => "dropout-shallow",
            SchemeTag::DropoutDeep => "dropout-deep",
            SchemeTag::ModulatedQuadratic => "modulated-quadratic",
            SchemeTag::NormLinear => "norm-linear",
        }
    }
}

/// Which slow clock carries the limit dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DegenerateClass {
    /// Drift on the clock 1/(ασ²).
    Nondegenerate,
    /// L̂ = L + f·η + ½H:(η⊗η) + g(η); SDE on the clock 1/(α²σ²).
    DegenerateQuadratic,
    Trivial,
}

/// Pieces of a degenerate-quadratic scheme.
///
/// Only the upper triangle of H enters the limit (H has zero diagonal), so
/// [`DegenerateParts::h_gradients`] lists ∇_w H_kl for k < l.
pub trait DegenerateParts: Send + Sync {
    fn noise_dim(&self) -> usize;
    fn f(&self, w: &ParamVector) -> ParamVector;

    /// m × d matrix whose column i is ∇_w f_i.
    fn f_jacobian(&self, w: &ParamVector) -> Matrix {
        numdiff::jacobian(|x| self.f(x), w, numdiff::GRAD_STEP).transpose()
    }

    fn h(&self, w: &ParamVector) -> Matrix {
        let d = self.noise_dim();
        let _ = w;
        Matrix::zeros(d, d)
    }

    fn h_gradients(&self, _w: &ParamVector) -> Vec<(usize, usize, ParamVector)> {
        Vec::new()
    }

    fn g(&self, eta: &ParamVector) -> f64;
}

pub trait NoisyLoss: Send + Sync {
    fn base(&self) -> SharedLoss;
    fn noise_dim(&self) -> usize;
    fn value(&self, w: &ParamVector, eta: &ParamVector) -> f64;
    fn grad_w(&self, w: &ParamVector, eta: &ParamVector) -> ParamVector;
    fn tag(&self) -> SchemeTag;
    fn degenerate_class(&self) -> DegenerateClass;

    /// Closed form of ½Δ_η L̂(·, 0) for the given noise family.
    fn analytic_reg(&self, _family: Option<&NoiseFamily>) -> Option<SharedReg> {
        None
    }

    /// Regularizer whose constrained gradient flow is the slow limit, for
    /// degenerate schemes where that limit is deterministic.
    fn limit_reg(&self) -> Option<SharedReg> {
        None
    }

    fn degenerate_parts(&self) -> Option<&dyn DegenerateParts> {
        None
    }

    /// Noise family the scheme is defined with, if it is not free to choose.
    fn native_noise(&self, _sigma: f64) -> Option<NoiseFamily> {
        None
    }

    fn dim(&self) -> usize {
        self.base().dim()
    }
}

pub type SharedNoisyLoss = Arc<dyn NoisyLoss>;

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> ParamVector {
        ParamVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
    }

    /// Consistency, gradient and degenerate-decomposition checks.
    pub fn check_scheme(s: &dyn NoisyLoss, seed: u64, w_scale: f64, eta_scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = s.base();
        let zero = ParamVector::zeros(s.noise_dim());
        for _ in 0..100 {
            let w = random_vec(&mut rng, s.dim(), w_scale);
            assert_eq!(s.value(&w, &zero), base.value(&w), "{}", s.tag().id());
        }
        for _ in 0..20 {
            let w = random_vec(&mut rng, s.dim(), w_scale);
            let eta = random_vec(&mut rng, s.noise_dim(), eta_scale);
            let fd = numdiff::gradient(|x| s.value(x, &eta), &w, 1e-6);
            let g = s.grad_w(&w, &eta);
            assert!(numdiff::rel_err(&g, &fd, 1e-6) < 1e-4, "{}: {g} vs {fd}", s.tag().id());
        }
        if let Some(parts) = s.degenerate_parts() {
            assert_eq!(parts.noise_dim(), s.noise_dim());
            for _ in 0..20 {
                let w = random_vec(&mut rng, s.dim(), w_scale);
                let eta = random_vec(&mut rng, s.noise_dim(), eta_scale);
                let h = parts.h(&w);
                for i in 0..h.nrows() {
                    assert_eq!(h[(i, i)], 0.0);
                }
                let quad = base.value(&w) + parts.f(&w).dot(&eta) + 0.5 * (&h * &eta).dot(&eta) + parts.g(&eta);
                let v = s.value(&w, &eta);
                assert!((v - quad).abs() < 1e-10 * (1.0 + v.abs()), "{}", s.tag().id());
                assert_eq!(parts.g(&zero), 0.0);
                let jac = parts.f_jacobian(&w);
                let fd = numdiff::jacobian(|x| parts.f(x), &w, 1e-6).transpose();
                assert!((&jac - fd).norm() < 1e-6 * (1.0 + jac.norm()));
                for (k, l, grad) in parts.h_gradients(&w) {
                    assert!(k < l);
                    let fd = numdiff::gradient(|x| parts.h(x)[(k, l)], &w, 1e-6);
                    assert!((grad - fd).norm() < 1e-6);
                }
                // Third η-differences of a quadratic vanish.
                let dir = random_vec(&mut rng, s.noise_dim(), 1.0);
                let q = |t: f64| s.value(&w, &(&eta + &dir * t)) - parts.g(&(&eta + &dir * t));
                let h3 = 0.1;
                let third = q(2.0 * h3) - 3.0 * q(h3) + 3.0 * q(0.0) - q(-h3);
                assert!(third.abs() < 1e-8, "{} third difference {third}", s.tag().id());
            }
        }
    }
}
