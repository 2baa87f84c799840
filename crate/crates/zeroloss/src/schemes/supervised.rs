//! Schemes acting on the data term of an empirical MSE loss.

use std::sync::Arc;

use super::{DegenerateClass, DegenerateParts, NoisyLoss, SchemeTag};
use crate::losses::{Loss, MseLoss, SharedLoss};
use crate::noise::NoiseFamily;
use crate::regularizers::{HalfLaplacian, SharedReg};
use crate::{Error, Matrix, ParamVector, Result};

fn jacobian_columns(cols: Vec<ParamVector>) -> Matrix {
    Matrix::from_columns(&cols)
}

/// L̂ = (1/N) Σ_i (f_w(x_i) − y_i − η_i)².
#[derive(Clone)]
pub struct LabelNoise {
    pub loss: Arc<MseLoss>,
}

impl LabelNoise {
    pub fn new(loss: Arc<MseLoss>) -> Self {
        Self { loss }
    }
}

impl NoisyLoss for LabelNoise {
    fn base(&self) -> SharedLoss {
        self.loss.clone()
    }
    fn noise_dim(&self) -> usize {
        self.loss.n()
    }
    fn value(&self, w: &ParamVector, eta: &ParamVector) -> f64 {
        (self.loss.residuals(w) - eta).norm_squared() / self.loss.n() as f64
    }
    fn grad_w(&self, w: &ParamVector, eta: &ParamVector) -> ParamVector {
        let n = self.loss.n() as f64;
        let r = self.loss.residuals(w) - eta;
        let mut g = ParamVector::zeros(self.loss.dim());
        for (i, x) in self.loss.data.inputs.iter().enumerate() {
            g.axpy(2.0 * r[i] / n, &self.loss.pred.grad_w(w, x), 1.0);
        }
        g
    }
    fn tag(&self) -> SchemeTag {
        SchemeTag::LabelNoise
    }
    fn degenerate_class(&self) -> DegenerateClass {
        DegenerateClass::DegenerateQuadratic
    }
    fn limit_reg(&self) -> Option<SharedReg> {
        let n = self.loss.n() as f64;
        Some(Arc::new(HalfLaplacian::new(self.loss.clone(), 1.0 / (2.0 * n))))
    }
    fn degenerate_parts(&self) -> Option<&dyn DegenerateParts> {
        Some(self)
    }
}

impl DegenerateParts for LabelNoise {
    fn noise_dim(&self) -> usize {
        self.loss.n()
    }
    fn f(&self, w: &ParamVector) -> ParamVector {
        self.loss.residuals(w) * (-2.0 / self.loss.n() as f64)
    }
    fn f_jacobian(&self, w: &ParamVector) -> Matrix {
        let c = -2.0 / self.loss.n() as f64;
        jacobian_columns(self.loss.sample_gradients(w).into_iter().map(|g| g * c).collect())
    }
    fn g(&self, eta: &ParamVector) -> f64 {
        eta.norm_squared() / self.loss.n() as f64
    }
}

/// L̂ = (1/N) Σ_i (1 + η_i) ℓ_i with the two-point minibatch noise.
#[derive(Clone)]
pub struct Minibatch {
    pub loss: Arc<MseLoss>,
    pub m_expect: usize,
}

impl Minibatch {
    pub fn new(loss: Arc<MseLoss>, m_expect: usize) -> Result<Self> {
        if m_expect == 0 || m_expect > loss.n() {
            return Err(Error::Config(format!(
                "expected batch size must lie in 1..={}, got {m_expect}",
                loss.n()
            )));
        }
        Ok(Self { loss, m_expect })
    }

    /// σ² = (N − m)/m of the native noise.
    pub fn noise_variance(&self) -> f64 {
        (self.loss.n() - self.m_expect) as f64 / self.m_expect as f64
    }
}

impl NoisyLoss for Minibatch {
    fn base(&self) -> SharedLoss {
        self.loss.clone()
    }
    fn noise_dim(&self) -> usize {
        self.loss.n()
    }
    fn value(&self, w: &ParamVector, eta: &ParamVector) -> f64 {
        let r = self.loss.residuals(w);
        let n = self.loss.n() as f64;
        r.iter().zip(eta.iter()).map(|(r, e)| (1.0 + e) * r * r).sum::<f64>() / n
    }
    fn grad_w(&self, w: &ParamVector, eta: &ParamVector) -> ParamVector {
        let n = self.loss.n() as f64;
        let mut g = ParamVector::zeros(self.loss.dim());
        for (i, (x, y)) in self.loss.data.inputs.iter().zip(&self.loss.data.labels).enumerate() {
            let c = 1.0 + eta[i];
            if c == 0.0 {
                continue;
            }
            let r = self.loss.pred.predict(w, x) - y;
            g.axpy(2.0 * c * r / n, &self.loss.pred.grad_w(w, x), 1.0);
        }
        g
    }
    fn tag(&self) -> SchemeTag {
        SchemeTag::Minibatch
    }
    fn degenerate_class(&self) -> DegenerateClass {
        DegenerateClass::DegenerateQuadratic
    }
    fn degenerate_parts(&self) -> Option<&dyn DegenerateParts> {
        Some(self)
    }
    fn native_noise(&self, _sigma: f64) -> Option<NoiseFamily> {
        NoiseFamily::minibatch(self.loss.n(), self.m_expect).ok()
    }
}

impl DegenerateParts for Minibatch {
    fn noise_dim(&self) -> usize {
        self.loss.n()
    }
    fn f(&self, w: &ParamVector) -> ParamVector {
        self.loss.residuals(w).map(|r| r * r / self.loss.n() as f64)
    }
    fn f_jacobian(&self, w: &ParamVector) -> Matrix {
        let n = self.loss.n() as f64;
        let r = self.loss.residuals(w);
        jacobian_columns(
            self.loss
                .sample_gradients(w)
                .into_iter()
                .enumerate()
                .map(|(i, g)| g * (2.0 * r[i] / n))
                .collect(),
        )
    }
    fn g(&self, _eta: &ParamVector) -> f64 {
        0.0
    }
}

/// Which constant multiplies ΔL/(2N) in the combined label + minibatch limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombinedConstant {
    /// √(1 + σ₀²)
    Sqrt,
    /// 1 + σ₀²
    Linear,
}

impl CombinedConstant {
    pub fn factor(&self, sigma0: f64) -> f64 {
        let v = 1.0 + sigma0 * sigma0;
        match self {
            CombinedConstant::Sqrt => v.sqrt(),
            CombinedConstant::Linear => v,
        }
    }
}

/// L̂ = (1/N) Σ_i (1 + η̃_i)(f_w(x_i) − y_i − η_i)² with stacked noise (η, η̃).
#[derive(Clone)]
pub struct LabelPlusMinibatch {
    pub loss: Arc<MseLoss>,
    pub sigma0: f64,
    pub constant: CombinedConstant,
}

impl LabelPlusMinibatch {
    pub fn new(loss: Arc<MseLoss>, sigma0: f64, constant: CombinedConstant) -> Self {
        Self { loss, sigma0, constant }
    }
}

impl NoisyLoss for LabelPlusMinibatch {
    fn base(&self) -> SharedLoss {
        self.loss.clone()
    }
    fn noise_dim(&self) -> usize {
        2 * self.loss.n()
    }
    fn value(&self, w: &ParamVector, zeta: &ParamVector) -> f64 {
        let n = self.loss.n();
        let r = self.loss.residuals(w);
        (0..n)
            .map(|i| (1.0 + zeta[n + i]) * (r[i] - zeta[i]).powi(2))
            .sum::<f64>()
            / n as f64
    }
    fn grad_w(&self, w: &ParamVector, zeta: &ParamVector) -> ParamVector {
        let n = self.loss.n();
        let mut g = ParamVector::zeros(self.loss.dim());
        for (i, (x, y)) in self.loss.data.inputs.iter().zip(&self.loss.data.labels).enumerate() {
            let c = 1.0 + zeta[n + i];
            if c == 0.0 {
                continue;
            }
            let r = self.loss.pred.predict(w, x) - y - zeta[i];
            g.axpy(2.0 * c * r / n as f64, &self.loss.pred.grad_w(w, x), 1.0);
        }
        g
    }
    fn tag(&self) -> SchemeTag {
        SchemeTag::LabelPlusMinibatch
    }
    fn degenerate_class(&self) -> DegenerateClass {
        DegenerateClass::DegenerateQuadratic
    }
    fn limit_reg(&self) -> Option<SharedReg> {
        let n = self.loss.n() as f64;
        let c = self.constant.factor(self.sigma0);
        Some(Arc::new(HalfLaplacian::new(self.loss.clone(), c / (2.0 * n))))
    }
    fn degenerate_parts(&self) -> Option<&dyn DegenerateParts> {
        Some(self)
    }
    fn native_noise(&self, sigma: f64) -> Option<NoiseFamily> {
        let n = self.loss.n();
        Some(NoiseFamily::concat(vec![
            NoiseFamily::gaussian(sigma, n),
            NoiseFamily::bernoulli_with_sigma(sigma, n).ok()?,
        ]))
    }
}

impl DegenerateParts for LabelPlusMinibatch {
    fn noise_dim(&self) -> usize {
        2 * self.loss.n()
    }
    fn f(&self, w: &ParamVector) -> ParamVector {
        let n = self.loss.n();
        let r = self.loss.residuals(w);
        ParamVector::from_fn(2 * n, |k, _| {
            if k < n {
                -2.0 * r[k] / n as f64
            } else {
                r[k - n].powi(2) / n as f64
            }
        })
    }
    fn f_jacobian(&self, w: &ParamVector) -> Matrix {
        let n = self.loss.n();
        let r = self.loss.residuals(w);
        let grads = self.loss.sample_gradients(w);
        let mut cols: Vec<ParamVector> = grads.iter().map(|g| g * (-2.0 / n as f64)).collect();
        cols.extend(grads.iter().enumerate().map(|(i, g)| g * (2.0 * r[i] / n as f64)));
        jacobian_columns(cols)
    }
    fn h(&self, w: &ParamVector) -> Matrix {
        let n = self.loss.n();
        let r = self.loss.residuals(w);
        let mut h = Matrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            let v = -2.0 * r[i] / n as f64;
            h[(i, n + i)] = v;
            h[(n + i, i)] = v;
        }
        h
    }
    fn h_gradients(&self, w: &ParamVector) -> Vec<(usize, usize, ParamVector)> {
        let n = self.loss.n();
        self.loss
            .sample_gradients(w)
            .into_iter()
            .enumerate()
            .map(|(i, g)| (i, n + i, g * (-2.0 / n as f64)))
            .collect()
    }
    fn g(&self, zeta: &ParamVector) -> f64 {
        let n = self.loss.n();
        (0..n).map(|i| (1.0 + zeta[n + i]) * zeta[i] * zeta[i]).sum::<f64>() / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{check_scheme, random_vec};
    use super::*;
    use crate::losses::{Dataset, OlmPredictor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn olm_problem(seed: u64, n: usize, d: usize) -> (Arc<MseLoss>, ParamVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = OlmPredictor::new(d);
        let w_star = random_vec(&mut rng, 2 * d, 1.0);
        let xs = (0..n).map(|_| random_vec(&mut rng, d, 1.0)).collect();
        let data = Dataset::teacher(&p, &w_star, xs).unwrap();
        (Arc::new(MseLoss::new(Arc::new(p), Arc::new(data)).unwrap()), w_star)
    }

    #[test]
    fn invariants() {
        let (l, _) = olm_problem(1, 5, 3);
        check_scheme(&LabelNoise::new(l.clone()), 1, 1.0, 0.5);
        check_scheme(&Minibatch::new(l.clone(), 2).unwrap(), 2, 1.0, 0.5);
        check_scheme(&LabelPlusMinibatch::new(l, 1.0, CombinedConstant::Linear), 3, 1.0, 0.5);
    }

    #[test]
    fn label_noise_on_manifold() {
        let (l, w) = olm_problem(2, 4, 3);
        let s = LabelNoise::new(l.clone());
        let eta = ParamVector::from_vec(vec![0.3, -0.2, 0.1, 0.5]);
        assert!((s.value(&w, &eta) - eta.norm_squared() / 4.0).abs() < 1e-15);
        let jac = s.f_jacobian(&w);
        for (i, x) in l.data.inputs.iter().enumerate() {
            let expect = l.pred.grad_w(&w, x) * (-2.0 / 4.0);
            assert!((jac.column(i) - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn minibatch_edge_cases() {
        let (l, w) = olm_problem(3, 6, 2);
        let s = Minibatch::new(l.clone(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u = random_vec(&mut rng, 4, 1.0);
        let drop_all = ParamVector::from_element(6, -1.0);
        assert_eq!(s.value(&u, &drop_all), 0.0);
        assert_eq!(s.grad_w(&u, &drop_all).norm(), 0.0);
        assert_eq!(s.f(&w).norm(), 0.0);
        assert_eq!(s.f_jacobian(&w).norm(), 0.0);
        assert!(Minibatch::new(l.clone(), 0).is_err());
        assert!(Minibatch::new(l.clone(), 7).is_err());
        let full = Minibatch::new(l.clone(), 6).unwrap();
        let fam = full.native_noise(0.0).unwrap();
        let mut r = crate::noise::RngState::new(1, 0);
        let eta = fam.sample(&mut r);
        assert_eq!(full.value(&u, &eta), l.value(&u));
        assert!((s.noise_variance() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn combined_on_manifold() {
        let (l, w) = olm_problem(4, 3, 2);
        let s = LabelPlusMinibatch::new(l, 1.0, CombinedConstant::Linear);
        let mut zeta = ParamVector::zeros(6);
        zeta[3] = 0.7;
        zeta[5] = -1.0;
        assert_eq!(s.value(&w, &zeta), 0.0);
        // Mixed η_i, η̃_j derivative by finite differences.
        let h = 1e-3;
        let mut zeta = ParamVector::zeros(6);
        for i in 0..3 {
            for j in 0..3 {
                let mut e = |a: f64, b: f64| {
                    zeta.fill(0.0);
                    zeta[i] = a;
                    zeta[3 + j] = b;
                    s.value(&w, &zeta)
                };
                let mixed = (e(h, h) - e(h, -h) - e(-h, h) + e(-h, -h)) / (4.0 * h * h);
                assert!(mixed.abs() < 1e-8);
            }
        }
        assert!((CombinedConstant::Sqrt.factor(1.0) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(CombinedConstant::Linear.factor(1.0), 2.0);
    }
}
