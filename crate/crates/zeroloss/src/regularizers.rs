//! Implicit regularizers and the probes that connect them to noisy GD.

use std::sync::Arc;

use rayon::prelude::*;

use crate::geometry::{GapThreshold, ManifoldPoint, ON_MANIFOLD_TOL};
use crate::losses::{Dataset, Loss, ShallowNet, SharedLoss};
use crate::noise::{NoiseFamily, NoiseKind, RngState};
use crate::schemes::{CombinedConstant, NoisyLoss, OlmDropoutReg, ShallowDropoutReg};
use crate::{numdiff, Error, Matrix, ParamVector, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    AnalyticClosedForm,
    NumericEtaLaplacian,
    Correlated,
}

pub trait Regularizer: Send + Sync {
    fn value(&self, w: &ParamVector) -> f64;

    fn gradient(&self, w: &ParamVector) -> ParamVector {
        numdiff::gradient(|x| self.value(x), w, numdiff::GRAD_STEP)
    }

    fn provenance(&self) -> Provenance;
    fn name(&self) -> String;
}

pub type SharedReg = Arc<dyn Regularizer>;

/// c · ΔL(w). With c = ½ this is the anti-PGD regularizer, with c = 1/(2N)
/// the label-noise one.
#[derive(Clone)]
pub struct HalfLaplacian {
    pub loss: SharedLoss,
    pub scale: f64,
}

impl HalfLaplacian {
    pub fn new(loss: SharedLoss, scale: f64) -> Self {
        Self { loss, scale }
    }
}

fn hessian_slices(loss: &dyn Loss, w: &ParamVector) -> Vec<Matrix> {
    crate::geometry::ThirdDerivative::compute(loss, w, numdiff::THIRD_STEP).slices
}

impl Regularizer for HalfLaplacian {
    fn value(&self, w: &ParamVector) -> f64 {
        self.scale * self.loss.hessian(w).trace()
    }
    fn gradient(&self, w: &ParamVector) -> ParamVector {
        let s = hessian_slices(self.loss.as_ref(), w);
        ParamVector::from_iterator(s.len(), s.iter().map(|t| self.scale * t.trace()))
    }
    fn provenance(&self) -> Provenance {
        Provenance::AnalyticClosedForm
    }
    fn name(&self) -> String {
        format!("{}·ΔL", self.scale)
    }
}

/// ½ Σ_j w_j² ∂²_{jj} L(w).
#[derive(Clone)]
pub struct GaussianDropConnectReg {
    pub loss: SharedLoss,
}

impl GaussianDropConnectReg {
    pub fn new(loss: SharedLoss) -> Self {
        Self { loss }
    }
}

impl Regularizer for GaussianDropConnectReg {
    fn value(&self, w: &ParamVector) -> f64 {
        let h = self.loss.hessian(w);
        0.5 * (0..w.len()).map(|j| w[j] * w[j] * h[(j, j)]).sum::<f64>()
    }
    fn gradient(&self, w: &ParamVector) -> ParamVector {
        let h = self.loss.hessian(w);
        let s = hessian_slices(self.loss.as_ref(), w);
        ParamVector::from_fn(w.len(), |k, _| {
            w[k] * h[(k, k)] + 0.5 * (0..w.len()).map(|j| w[j] * w[j] * s[k][(j, j)]).sum::<f64>()
        })
    }
    fn provenance(&self) -> Provenance {
        Provenance::AnalyticClosedForm
    }
    fn name(&self) -> String {
        "gaussian-dropconnect".into()
    }
}

/// ∇L(w)·w + Σ_j (L(w with w_j zeroed) − L(w)).
#[derive(Clone)]
pub struct BernoulliDropConnectReg {
    pub loss: SharedLoss,
}

impl BernoulliDropConnectReg {
    pub fn new(loss: SharedLoss) -> Self {
        Self { loss }
    }
}

fn zero_coord(w: &ParamVector, j: usize) -> ParamVector {
    let mut x = w.clone();
    x[j] = 0.0;
    x
}

impl Regularizer for BernoulliDropConnectReg {
    fn value(&self, w: &ParamVector) -> f64 {
        let l0 = self.loss.value(w);
        self.loss.gradient(w).dot(w)
            + (0..w.len())
                .map(|j| self.loss.value(&zero_coord(w, j)) - l0)
                .sum::<f64>()
    }
    fn gradient(&self, w: &ParamVector) -> ParamVector {
        let g = self.loss.gradient(w);
        let mut out = &g + self.loss.hessian(w) * w;
        for j in 0..w.len() {
            let mut gj = self.loss.gradient(&zero_coord(w, j));
            gj[j] = 0.0;
            out += gj - &g;
        }
        out
    }
    fn provenance(&self) -> Provenance {
        Provenance::AnalyticClosedForm
    }
    fn name(&self) -> String {
        "bernoulli-dropconnect".into()
    }
}

/// ½ ⟨∇²L(w), C⟩ for L̂(w, η) = L(w + η) with η ~ N(0, C).
#[derive(Clone)]
pub struct CorrelatedReg {
    pub loss: SharedLoss,
    pub c: Matrix,
}

impl CorrelatedReg {
    pub fn new(loss: SharedLoss, c: Matrix) -> Result<Self> {
        if c.nrows() != loss.dim() || c.ncols() != loss.dim() {
            return Err(Error::Dimension {
                expected: loss.dim(),
                got: c.nrows(),
            });
        }
        Ok(Self { loss, c })
    }
}

impl Regularizer for CorrelatedReg {
    fn value(&self, w: &ParamVector) -> f64 {
        0.5 * self.loss.hessian(w).dot(&self.c)
    }
    fn gradient(&self, w: &ParamVector) -> ParamVector {
        let s = hessian_slices(self.loss.as_ref(), w);
        ParamVector::from_iterator(s.len(), s.iter().map(|t| 0.5 * t.dot(&self.c)))
    }
    fn provenance(&self) -> Provenance {
        Provenance::Correlated
    }
    fn name(&self) -> String {
        "correlated".into()
    }
}

/// ½ Δ_η L̂(w, 0) by second central differences in η.
///
/// The step is h·max(1, ‖w‖). The gradient differentiates the same stencil
/// through ∇_w L̂, so value and gradient are consistent.
#[derive(Clone)]
pub struct NumericReg {
    pub lhat: Arc<dyn NoisyLoss>,
    pub h: f64,
}

pub const ETA_LAPLACIAN_STEP: f64 = 1e-3;

impl NumericReg {
    pub fn new(lhat: Arc<dyn NoisyLoss>, h: Option<f64>) -> Self {
        Self {
            lhat,
            h: h.unwrap_or(ETA_LAPLACIAN_STEP),
        }
    }

    fn step(&self, w: &ParamVector) -> f64 {
        self.h * w.norm().max(1.0)
    }
}

impl Regularizer for NumericReg {
    fn value(&self, w: &ParamVector) -> f64 {
        let d = self.lhat.noise_dim();
        let h = self.step(w);
        let mut eta = ParamVector::zeros(d);
        let v0 = self.lhat.value(w, &eta);
        let mut acc = 0.0;
        for i in 0..d {
            eta[i] = h;
            let vp = self.lhat.value(w, &eta);
            eta[i] = -h;
            let vm = self.lhat.value(w, &eta);
            eta[i] = 0.0;
            acc += vp + vm - 2.0 * v0;
        }
        0.5 * acc / (h * h)
    }
    fn gradient(&self, w: &ParamVector) -> ParamVector {
        let d = self.lhat.noise_dim();
        let h = self.step(w);
        let mut eta = ParamVector::zeros(d);
        let g0 = self.lhat.grad_w(w, &eta);
        let mut acc = ParamVector::zeros(w.len());
        for i in 0..d {
            eta[i] = h;
            acc += self.lhat.grad_w(w, &eta);
            eta[i] = -h;
            acc += self.lhat.grad_w(w, &eta);
            eta[i] = 0.0;
            acc -= &g0 * 2.0;
        }
        acc * (0.5 / (h * h))
    }
    fn provenance(&self) -> Provenance {
        Provenance::NumericEtaLaplacian
    }
    fn name(&self) -> String {
        format!("numeric-eta-laplacian({})", self.lhat.tag().id())
    }
}

pub fn numeric_reg(lhat: Arc<dyn NoisyLoss>, h: Option<f64>) -> SharedReg {
    Arc::new(NumericReg::new(lhat, h))
}

pub fn reg_anti_pgd(loss: SharedLoss) -> SharedReg {
    Arc::new(HalfLaplacian::new(loss, 0.5))
}

pub fn reg_label_noise(loss: SharedLoss, n: usize) -> SharedReg {
    Arc::new(HalfLaplacian::new(loss, 0.5 / n as f64))
}

/// Combined label + minibatch limit: factor/(2N) · ΔL.
pub fn reg_label_minibatch(loss: SharedLoss, n: usize, sigma0: f64, constant: CombinedConstant) -> SharedReg {
    Arc::new(HalfLaplacian::new(loss, constant.factor(sigma0) / (2.0 * n as f64)))
}

pub fn reg_gaussian_dropconnect(loss: SharedLoss) -> SharedReg {
    Arc::new(GaussianDropConnectReg::new(loss))
}

pub fn reg_bernoulli_dropconnect(loss: SharedLoss) -> SharedReg {
    Arc::new(BernoulliDropConnectReg::new(loss))
}

pub fn reg_correlated(loss: SharedLoss, c: Matrix) -> Result<SharedReg> {
    Ok(Arc::new(CorrelatedReg::new(loss, c)?))
}

pub fn reg_olm(data: &Dataset) -> SharedReg {
    Arc::new(OlmDropoutReg::new(data))
}

pub fn reg_shallow(net: ShallowNet, data: Arc<Dataset>) -> SharedReg {
    Arc::new(ShallowDropoutReg::new(net, data))
}

/// Monte-Carlo estimate of ΔF = E[α(∇_wL̂(w,0) − ∇_wL̂(w,η))].
#[derive(Clone, Debug)]
pub struct DriftEstimate {
    pub mean: ParamVector,
    pub stderr: ParamVector,
    pub samples: usize,
    pub method: &'static str,
}

/// Number of independent work units; fixed so results do not depend on the
/// thread count.
const DRIFT_CHUNKS: usize = 64;

struct Moments {
    sum: ParamVector,
    sq: ParamVector,
    n: usize,
}

impl Moments {
    fn new(m: usize) -> Self {
        Self {
            sum: ParamVector::zeros(m),
            sq: ParamVector::zeros(m),
            n: 0,
        }
    }
    fn push(&mut self, x: &ParamVector) {
        self.sum += x;
        self.sq += x.component_mul(x);
        self.n += 1;
    }
    fn merge(mut self, o: &Moments) -> Self {
        self.sum += &o.sum;
        self.sq += &o.sq;
        self.n += o.n;
        self
    }
    fn mean_and_se(&self) -> (ParamVector, ParamVector) {
        let n = self.n.max(1) as f64;
        let mean = &self.sum / n;
        let var = (&self.sq / n - mean.component_mul(&mean)).map(|v| v.max(0.0));
        let se = var.map(|v| (v / (n - 1.0).max(1.0)).sqrt());
        (mean, se)
    }
}

/// Runs `per_chunk` samples in each of the fixed chunks, each with its own
/// substream, and merges in chunk order.
fn chunked<F>(rng: &RngState, n_samples: usize, m: usize, f: F) -> Moments
where
    F: Fn(&mut RngState, &mut Moments) + Sync,
{
    let per = n_samples.div_ceil(DRIFT_CHUNKS);
    let parts: Vec<Moments> = (0..DRIFT_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut r = rng.substream(c as u64);
            let mut mo = Moments::new(m);
            let count = per.min(n_samples.saturating_sub(c * per));
            for _ in 0..count {
                f(&mut r, &mut mo);
            }
            mo
        })
        .collect();
    parts.iter().fold(Moments::new(m), |a, b| a.merge(b))
}

pub fn drift_expectation(
    lhat: &dyn NoisyLoss,
    family: &NoiseFamily,
    w: &ParamVector,
    alpha: f64,
    n_samples: usize,
    rng: &RngState,
) -> Result<DriftEstimate> {
    if family.dim != lhat.noise_dim() {
        return Err(Error::Dimension {
            expected: lhat.noise_dim(),
            got: family.dim,
        });
    }
    let m = w.len();
    if family.is_zero() {
        return Ok(DriftEstimate {
            mean: ParamVector::zeros(m),
            stderr: ParamVector::zeros(m),
            samples: 0,
            method: "zero-noise",
        });
    }
    let g0 = lhat.grad_w(w, &ParamVector::zeros(family.dim));
    if let NoiseKind::BernoulliDropout { p } = family.kind {
        return Ok(bernoulli_stratified(lhat, p, family.dim, w, &g0, alpha, n_samples, rng));
    }
    if family.is_symmetric() {
        let mo = chunked(rng, n_samples, m, |r, mo| {
            let eta = family.sample(r);
            let gp = lhat.grad_w(w, &eta);
            let gm = lhat.grad_w(w, &(-&eta));
            mo.push(&((&g0 * 2.0 - gp - gm) * (0.5 * alpha)));
        });
        let (mean, stderr) = mo.mean_and_se();
        return Ok(DriftEstimate {
            mean,
            stderr,
            samples: mo.n,
            method: "antithetic",
        });
    }
    let mo = chunked(rng, n_samples, m, |r, mo| {
        let eta = family.sample(r);
        mo.push(&((&g0 - lhat.grad_w(w, &eta)) * alpha));
    });
    let (mean, stderr) = mo.mean_and_se();
    Ok(DriftEstimate {
        mean,
        stderr,
        samples: mo.n,
        method: "plain",
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Enumerates all k-subsets of 0..n in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < n - k + i {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Stratifies Bernoulli-dropout noise by the number k of dropped
/// coordinates. Strata small enough are enumerated exactly; the rest are
/// sampled with subsets drawn uniformly.
#[allow(clippy::too_many_arguments)]
fn bernoulli_stratified(
    lhat: &dyn NoisyLoss,
    p: f64,
    d: usize,
    w: &ParamVector,
    g0: &ParamVector,
    alpha: f64,
    n_samples: usize,
    rng: &RngState,
) -> DriftEstimate {
    use rand::seq::index::sample as index_sample;

    let m = w.len();
    let keep = p / (1.0 - p);
    let eval = |dropped: &[usize]| {
        let mut eta = ParamVector::from_element(d, keep);
        for &j in dropped {
            eta[j] = -1.0;
        }
        (g0 - lhat.grad_w(w, &eta)) * alpha
    };
    let weights: Vec<f64> = (0..=d)
        .map(|k| binomial(d, k) * p.powi(k as i32) * (1.0 - p).powi((d - k) as i32))
        .collect();
    let wmax = weights.iter().cloned().fold(0.0, f64::max);
    let mut mean = ParamVector::zeros(m);
    let mut var = ParamVector::zeros(m);
    let mut used = 0;
    let budget = n_samples.max(d + 1) / (d + 1);
    for (k, &pk) in weights.iter().enumerate() {
        if pk < 1e-18 * wmax {
            continue;
        }
        let count = binomial(d, k);
        if count <= budget as f64 {
            let subs = subsets(d, k);
            let mut acc = ParamVector::zeros(m);
            for s in &subs {
                acc += eval(s);
            }
            mean += acc * (pk / subs.len() as f64);
            used += subs.len();
        } else {
            let mo = chunked(&rng.substream(1_000 + k as u64), budget, m, |r, mo| {
                let idx = index_sample(r, d, k).into_vec();
                mo.push(&eval(&idx));
            });
            let (mk, sk) = mo.mean_and_se();
            mean += mk * pk;
            var += sk.map(|s| (pk * s).powi(2));
            used += mo.n;
        }
    }
    DriftEstimate {
        mean,
        stderr: var.map(f64::sqrt),
        samples: used,
        method: "stratified-bernoulli",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timescale {
    /// Clock 1/(ασ²).
    Nondegenerate,
    /// Clock 1/(α²σ²).
    Degenerate,
    TrivialOnBoth,
    Inconclusive,
}

#[derive(Clone, Debug)]
pub struct Classification {
    pub verdict: Timescale,
    /// sup over probes of ‖∇ ½Δ_η L̂(·, 0)‖.
    pub reg_gradient: f64,
    /// sup over probes of ‖P ∇f‖_F (degenerate schemes).
    pub tangent_noise: f64,
    /// sup over probes of ‖P ∂²Φ[Σ]‖ (degenerate schemes).
    pub drift: f64,
    pub tol: f64,
}

/// Decides the slow clock numerically at points on (or near) Γ.
///
/// A quantity above `tol` counts as present, below `tol/100` as absent,
/// anything in between is inconclusive.
pub fn timescale_classify(lhat: Arc<dyn NoisyLoss>, probes: &[ParamVector], tol: f64) -> Result<Classification> {
    let reg = NumericReg::new(lhat.clone(), None);
    let reg_gradient = probes.iter().map(|w| reg.gradient(w).norm()).fold(0.0, f64::max);
    let mut out = Classification {
        verdict: Timescale::Inconclusive,
        reg_gradient,
        tangent_noise: 0.0,
        drift: 0.0,
        tol,
    };
    if reg_gradient > tol {
        out.verdict = Timescale::Nondegenerate;
        return Ok(out);
    }
    if reg_gradient >= tol * 1e-2 {
        return Ok(out);
    }
    let Some(parts) = lhat.degenerate_parts() else {
        out.verdict = Timescale::TrivialOnBoth;
        return Ok(out);
    };
    let base = lhat.base();
    for w in probes {
        let mp = ManifoldPoint::new(base.as_ref(), w, GapThreshold::default(), ON_MANIFOLD_TOL)?;
        let j = parts.f_jacobian(w);
        out.tangent_noise = out.tangent_noise.max((&mp.proj.p * &j).norm());
        let sigma = noise_covariance(parts, w, 1.0);
        out.drift = out.drift.max((&mp.proj.p * mp.phi_second(&sigma)).norm());
    }
    let sup = out.tangent_noise.max(out.drift);
    out.verdict = if sup > tol {
        Timescale::Degenerate
    } else if sup < tol * 1e-2 {
        Timescale::TrivialOnBoth
    } else {
        Timescale::Inconclusive
    };
    Ok(out)
}

/// Σ = ∇f ∇fᵀ + σ₀² Σ_{k<l} ∇H_kl ∇H_klᵀ.
pub fn noise_covariance(parts: &dyn crate::schemes::DegenerateParts, w: &ParamVector, sigma0: f64) -> Matrix {
    let j = parts.f_jacobian(w);
    let mut s = &j * j.transpose();
    for (_, _, g) in parts.h_gradients(w) {
        s.ger(sigma0 * sigma0, &g, &g, 1.0);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{MseLoss, OlmPredictor, Quadratic, RingSine};
    use crate::schemes::{AntiPgd, DropConnect, LabelNoise, Minibatch, Sgld};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring() -> SharedLoss {
        Arc::new(RingSine::default())
    }

    fn v(x: &[f64]) -> ParamVector {
        ParamVector::from_vec(x.to_vec())
    }

    struct LinearInEta(SharedLoss);
    impl NoisyLoss for LinearInEta {
        fn base(&self) -> SharedLoss {
            self.0.clone()
        }
        fn noise_dim(&self) -> usize {
            2
        }
        fn value(&self, w: &ParamVector, eta: &ParamVector) -> f64 {
            self.0.value(w) + 0.3 * eta[0] - 1.2 * eta[1]
        }
        fn grad_w(&self, w: &ParamVector, _eta: &ParamVector) -> ParamVector {
            self.0.gradient(w)
        }
        fn tag(&self) -> crate::schemes::SchemeTag {
            crate::schemes::SchemeTag::Sgld
        }
        fn degenerate_class(&self) -> crate::schemes::DegenerateClass {
            crate::schemes::DegenerateClass::Trivial
        }
    }

    #[test]
    fn numeric_reg_reference_values() {
        let r = NumericReg::new(Arc::new(LinearInEta(ring())), None);
        assert!(r.value(&v(&[0.3, 0.2])).abs() < 1e-9);
        let ap = NumericReg::new(Arc::new(AntiPgd::new(ring())), None);
        assert!((ap.value(&v(&[0.0, 1.0])) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_closed_forms() {
        let a = Matrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let q: SharedLoss = Arc::new(Quadratic::new(a.clone()));
        let iso: SharedLoss = Arc::new(Quadratic::isotropic(3, 2.0));
        let r = reg_anti_pgd(iso.clone());
        assert!((r.value(&v(&[0.1, 2.0, -1.0])) - 3.0).abs() < 1e-12);
        assert!(r.gradient(&v(&[0.1, 2.0, -1.0])).norm() < 1e-9);
        let w = v(&[0.4, -1.1, 0.7]);
        let ln = reg_label_noise(q.clone(), 5);
        assert!((ln.value(&w) - reg_anti_pgd(q.clone()).value(&w) / 5.0).abs() < 1e-14);
        let bern = reg_bernoulli_dropconnect(q.clone());
        let gauss = reg_gaussian_dropconnect(q.clone());
        assert!((bern.value(&w) - gauss.value(&w)).abs() < 1e-12);
        assert!(bern.value(&ParamVector::zeros(3)).abs() < 1e-15);
        let c0 = reg_correlated(q.clone(), Matrix::zeros(3, 3)).unwrap();
        assert_eq!(c0.value(&w), 0.0);
        let s2 = 0.3;
        let ci = reg_correlated(q.clone(), Matrix::identity(3, 3) * s2).unwrap();
        assert!((ci.value(&w) - s2 * reg_anti_pgd(q).value(&w)).abs() < 1e-12);
    }

    #[test]
    fn correlated_example_on_ring() {
        let l = ring();
        let s2 = 0.01;
        let c = Matrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]) * s2;
        let w = v(&[0.0, 1.0]);
        let h = l.hessian(&w);
        let expect = 0.25 * s2 * (h[(0, 0)] + 2.0 * h[(0, 1)] + h[(1, 1)]);
        let r = reg_correlated(l, c).unwrap();
        assert!((r.value(&w) - expect).abs() < 1e-15);
    }

    #[test]
    fn olm_zero_when_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = (0..3)
            .map(|_| ParamVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let data = Dataset::new(xs, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(reg_olm(&data).value(&v(&[0.4, -0.3, 0.4, 0.3])), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let regs: Vec<SharedReg> = vec![
            reg_anti_pgd(ring()),
            reg_gaussian_dropconnect(ring()),
            reg_bernoulli_dropconnect(ring()),
            numeric_reg(Arc::new(DropConnect::new(ring())), None),
        ];
        for r in regs {
            for _ in 0..10 {
                let w = ParamVector::from_fn(2, |_, _| rng.gen_range(-1.3..1.3));
                let fd = numdiff::gradient(|x| r.value(x), &w, 1e-5);
                let g = r.gradient(&w);
                assert!(numdiff::rel_err(&g, &fd, 1e-3) < 1e-4, "{}: {g} vs {fd}", r.name());
            }
        }
    }

    #[test]
    fn numeric_matches_closed_forms_on_ring() {
        let dc: Arc<dyn NoisyLoss> = Arc::new(DropConnect::new(ring()));
        let ap: Arc<dyn NoisyLoss> = Arc::new(AntiPgd::new(ring()));
        for k in 0..20 {
            let t = 0.1 + 0.31 * k as f64;
            let w = v(&[t.cos(), t.sin()]);
            for s in [&dc, &ap] {
                let a = s.analytic_reg(None).unwrap().value(&w);
                let b = NumericReg::new(s.clone(), None).value(&w);
                assert!((a - b).abs() < 1e-5 * a.abs().max(1.0), "{} {a} {b}", s.tag().id());
            }
        }
    }

    #[test]
    fn zero_noise_drift_is_zero() {
        let s = AntiPgd::new(ring());
        let fam = NoiseFamily::gaussian(0.0, 2);
        let d = drift_expectation(&s, &fam, &v(&[0.0, 1.0]), 0.1, 1000, &RngState::new(0, 0)).unwrap();
        assert_eq!(d.mean.norm(), 0.0);
    }

    #[test]
    fn drift_is_thread_count_independent() {
        let s = AntiPgd::new(ring());
        let fam = NoiseFamily::gaussian(0.01, 2);
        let w = v(&[0.0, 1.0]);
        let rng = RngState::new(9, 0);
        let a = drift_expectation(&s, &fam, &w, 0.3, 20_000, &rng).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| drift_expectation(&s, &fam, &w, 0.3, 20_000, &rng).unwrap());
        assert!((&a.mean - &b.mean).norm() <= 1e-12 * a.mean.norm());
    }

    #[test]
    fn subsets_enumeration() {
        assert_eq!(subsets(4, 2).len(), 6);
        assert_eq!(subsets(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(subsets(3, 3), vec![vec![0, 1, 2]]);
    }

    fn interpolating_olm(seed: u64, n: usize, d: usize) -> (Arc<MseLoss>, ParamVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = OlmPredictor::new(d);
        let w = ParamVector::from_fn(2 * d, |_, _| rng.gen_range(0.3..1.2));
        let xs = (0..n)
            .map(|_| ParamVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let data = Dataset::teacher(&p, &w, xs).unwrap();
        (Arc::new(MseLoss::new(Arc::new(p), Arc::new(data)).unwrap()), w)
    }

    #[test]
    fn classification() {
        let probes: Vec<ParamVector> = (0..4)
            .map(|k| {
                let t = 0.4 + k as f64;
                v(&[t.cos(), t.sin()])
            })
            .collect();
        let ap = timescale_classify(Arc::new(AntiPgd::new(ring())), &probes, 1e-6).unwrap();
        assert_eq!(ap.verdict, Timescale::Nondegenerate);
        let sg = timescale_classify(Arc::new(Sgld::new(ring())), &probes, 1e-6).unwrap();
        assert_eq!(sg.verdict, Timescale::Degenerate);

        let (l, w) = interpolating_olm(3, 8, 6);
        let mb = timescale_classify(
            Arc::new(Minibatch::new(l.clone(), 4).unwrap()),
            std::slice::from_ref(&w),
            1e-6,
        )
        .unwrap();
        assert_eq!(mb.verdict, Timescale::TrivialOnBoth);
        let ln = timescale_classify(Arc::new(LabelNoise::new(l)), &[w], 1e-6).unwrap();
        assert_eq!(ln.verdict, Timescale::Degenerate);
    }

    #[test]
    fn label_noise_laplacian_on_olm() {
        // On Γ, ΔL/(2N) = (4/N²) Σ_i Σ_j (u_j² + v_j²) x_ij².
        let (l, w) = interpolating_olm(4, 5, 3);
        let n = 5.0;
        let d = 3;
        let mut closed = 0.0;
        for x in &l.data.inputs {
            for j in 0..d {
                closed += (w[j] * w[j] + w[d + j] * w[d + j]) * x[j] * x[j];
            }
        }
        let numeric_lap = numdiff::hessian_from_value(|q| l.value(q), &w, 1e-3).trace() / (2.0 * n);
        let reg = reg_label_noise(l.clone(), 5).value(&w);
        assert!((reg - 4.0 / (n * n) * closed).abs() < 1e-6);
        assert!((numeric_lap - 4.0 / (n * n) * closed).abs() < 1e-6);
        // The commonly quoted 2/N² prefactor is off by exactly two.
        assert!((reg / (2.0 / (n * n) * closed) - 2.0).abs() < 1e-9);
    }
}
