//! Noise families ρ(σ), reproducible random streams and moment checks.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Matrix, ParamVector, Result};

/// Seeded ChaCha8 stream. ChaCha is counter-based, so (seed, stream) pins the
/// whole sequence on every platform.
#[derive(Clone, Debug)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    /// Independent stream for trajectory or worker `index`.
    pub fn substream(&self, index: u64) -> Self {
        let mixed = self
            .stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index.wrapping_add(1));
        Self::new(self.seed, mixed)
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

#[derive(Clone, Debug)]
pub enum NoiseKind {
    Gaussian {
        sigma: f64,
    },
    /// Support {−1, p/(1−p)} with P(−1) = p.
    BernoulliDropout {
        p: f64,
    },
    /// Uniform on (−√3σ, √3σ).
    Uniform {
        sigma: f64,
    },
    /// N(0, C); `factor` satisfies F Fᵀ = C.
    GaussianCorrelated {
        covariance: Matrix,
        factor: Matrix,
    },
    /// Independent blocks stacked into one vector.
    Concat(Vec<NoiseFamily>),
}

/// Growth class of the absolute moments M_k(σ) for k ≥ 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentScaling {
    /// M_k = O(σ^k).
    PowerK,
    /// M_k = O(σ²).
    Quadratic,
}

#[derive(Clone, Debug)]
pub struct NoiseFamily {
    pub kind: NoiseKind,
    pub dim: usize,
}

impl NoiseFamily {
    pub fn gaussian(sigma: f64, dim: usize) -> Self {
        assert!(sigma >= 0.0 && dim > 0);
        Self {
            kind: NoiseKind::Gaussian { sigma },
            dim,
        }
    }

    pub fn bernoulli(p: f64, dim: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&p) || dim == 0 {
            return Err(Error::Config(format!("bernoulli dropout needs 0 ≤ p < 1, got {p}")));
        }
        Ok(Self {
            kind: NoiseKind::BernoulliDropout { p },
            dim,
        })
    }

    /// Bernoulli dropout with variance σ², i.e. p = σ²/(1+σ²).
    pub fn bernoulli_with_sigma(sigma: f64, dim: usize) -> Result<Self> {
        let s2 = sigma * sigma;
        Self::bernoulli(s2 / (1.0 + s2), dim)
    }

    /// Two-point minibatch noise: η_i = −1 (sample left out) with
    /// probability 1 − m/N, else (N − m)/m.
    pub fn minibatch(n: usize, m_expect: usize) -> Result<Self> {
        if m_expect == 0 || m_expect > n {
            return Err(Error::Config(format!(
                "expected batch size must lie in 1..={n}, got {m_expect}"
            )));
        }
        Self::bernoulli(1.0 - m_expect as f64 / n as f64, n)
    }

    pub fn uniform(sigma: f64, dim: usize) -> Self {
        assert!(sigma >= 0.0 && dim > 0);
        Self {
            kind: NoiseKind::Uniform { sigma },
            dim,
        }
    }

    pub fn correlated(covariance: Matrix) -> Result<Self> {
        let n = covariance.nrows();
        if n == 0 || covariance.ncols() != n {
            return Err(Error::Config("covariance must be square and non-empty".into()));
        }
        let c = (&covariance + covariance.transpose()) * 0.5;
        let factor = match c.clone().cholesky() {
            Some(ch) => ch.l(),
            None => psd_factor(&c)?,
        };
        Ok(Self {
            kind: NoiseKind::GaussianCorrelated { covariance: c, factor },
            dim: n,
        })
    }

    pub fn concat(parts: Vec<NoiseFamily>) -> Self {
        let dim = parts.iter().map(|p| p.dim).sum();
        Self {
            kind: NoiseKind::Concat(parts),
            dim,
        }
    }

    /// Per-coordinate standard deviation. For correlated noise this is the
    /// root mean diagonal variance; for stacked blocks, the largest one.
    pub fn sigma(&self) -> f64 {
        match &self.kind {
            NoiseKind::Gaussian { sigma } | NoiseKind::Uniform { sigma } => *sigma,
            NoiseKind::BernoulliDropout { p } => (p / (1.0 - p)).sqrt(),
            NoiseKind::GaussianCorrelated { covariance, .. } => (covariance.trace() / self.dim as f64).sqrt(),
            NoiseKind::Concat(parts) => parts.iter().map(|p| p.sigma()).fold(0.0, f64::max),
        }
    }

    pub fn covariance(&self) -> Matrix {
        match &self.kind {
            NoiseKind::GaussianCorrelated { covariance, .. } => covariance.clone(),
            NoiseKind::Concat(parts) => {
                let mut c = Matrix::zeros(self.dim, self.dim);
                let mut off = 0;
                for p in parts {
                    c.view_mut((off, off), (p.dim, p.dim)).copy_from(&p.covariance());
                    off += p.dim;
                }
                c
            }
            _ => Matrix::identity(self.dim, self.dim) * self.sigma().powi(2),
        }
    }

    /// True if η and −η have the same law (antithetic pairing is valid).
    pub fn is_symmetric(&self) -> bool {
        match &self.kind {
            NoiseKind::BernoulliDropout { p } => *p == 0.0,
            NoiseKind::Concat(parts) => parts.iter().all(|p| p.is_symmetric()),
            _ => true,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma() == 0.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut out = ParamVector::zeros(self.dim);
        self.sample_into(rng, out.as_mut_slice());
        out
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match &self.kind {
            NoiseKind::Gaussian { sigma } => {
                for o in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = sigma * z;
                }
            }
            NoiseKind::BernoulliDropout { p } => {
                let up = p / (1.0 - p);
                for o in out.iter_mut() {
                    *o = if rng.gen::<f64>() < *p { -1.0 } else { up };
                }
            }
            NoiseKind::Uniform { sigma } => {
                let a = 3f64.sqrt() * sigma;
                for o in out.iter_mut() {
                    *o = if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 };
                }
            }
            NoiseKind::GaussianCorrelated { factor, .. } => {
                let z = ParamVector::from_fn(self.dim, |_, _| rng.sample(StandardNormal));
                let eta = factor * z;
                out.copy_from_slice(eta.as_slice());
            }
            NoiseKind::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    p.sample_into(rng, &mut out[off..off + p.dim]);
                    off += p.dim;
                }
            }
        }
    }

    /// M_k(σ) = E|η_i|^k for a single coordinate.
    pub fn analytic_moment(&self, k: u32) -> Result<f64> {
        if k == 0 {
            return Err(Error::NotAvailable("moments are defined for k ≥ 1".into()));
        }
        match &self.kind {
            NoiseKind::Gaussian { sigma } => Ok(sigma.powi(k as i32) * std_normal_abs_moment(k)),
            NoiseKind::Uniform { sigma } => {
                let a = 3f64.sqrt() * sigma;
                Ok(a.powi(k as i32) / (k as f64 + 1.0))
            }
            NoiseKind::BernoulliDropout { p } => Ok(p + (1.0 - p) * (p / (1.0 - p)).powi(k as i32)),
            _ => Err(Error::NotAvailable(format!(
                "no closed-form moment for {:?}",
                self.kind_name()
            ))),
        }
    }

    pub fn moment_scaling(&self) -> Option<MomentScaling> {
        match &self.kind {
            NoiseKind::Gaussian { .. } | NoiseKind::Uniform { .. } => Some(MomentScaling::PowerK),
            NoiseKind::GaussianCorrelated { .. } => Some(MomentScaling::PowerK),
            NoiseKind::BernoulliDropout { .. } => Some(MomentScaling::Quadratic),
            NoiseKind::Concat(_) => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            NoiseKind::Gaussian { .. } => "gaussian",
            NoiseKind::BernoulliDropout { .. } => "bernoulli-dropout",
            NoiseKind::Uniform { .. } => "uniform",
            NoiseKind::GaussianCorrelated { .. } => "gaussian-correlated",
            NoiseKind::Concat(_) => "concat",
        }
    }
}

/// E|Z|^k for Z ~ N(0,1): (k−1)!! for even k, (k−1)!!·√(2/π) for odd k.
fn std_normal_abs_moment(k: u32) -> f64 {
    let mut df = 1.0;
    let mut j = k as i64 - 1;
    while j > 1 {
        df *= j as f64;
        j -= 2;
    }
    if k.is_multiple_of(2) {
        df
    } else {
        df * (2.0 / std::f64::consts::PI).sqrt()
    }
}

/// Square-root factor of a PSD matrix via its eigendecomposition.
fn psd_factor(c: &Matrix) -> Result<Matrix> {
    let e = c.clone().symmetric_eigen();
    let scale = e.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if e.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return Err(Error::Config("covariance is not positive semidefinite".into()));
    }
    let roots = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&e.eigenvectors * Matrix::from_diagonal(&roots))
}

/// Hard cap on the number of draws in [`noise_decay_check`].
pub const DECAY_DRAW_BUDGET: f64 = 1e8;

/// Realized sup over k ≤ T/(α²σ²) of α‖η_k‖^p along one stream.
pub fn noise_decay_check<R: Rng + ?Sized>(
    family: &NoiseFamily,
    alpha: f64,
    sigma: f64,
    p_exp: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<f64> {
    if alpha <= 0.0 || sigma < 0.0 || horizon <= 0.0 {
        return Err(Error::Config("noise decay check needs α, T > 0 and σ ≥ 0".into()));
    }
    if sigma == 0.0 || family.is_zero() {
        return Ok(0.0);
    }
    let n = (horizon / (alpha * alpha * sigma * sigma)).floor();
    if n * family.dim as f64 > DECAY_DRAW_BUDGET {
        return Err(Error::Budget(format!("{n} draws of dimension {}", family.dim)));
    }
    let mut buf = vec![0.0; family.dim];
    let mut sup: f64 = 0.0;
    for _ in 0..=(n as u64) {
        family.sample_into(rng, &mut buf);
        let norm = buf.iter().map(|x| x * x).sum::<f64>().sqrt();
        sup = sup.max(alpha * norm.powf(p_exp));
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc_moments(fam: &NoiseFamily, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = RngState::new(seed, 0);
        let mut mean = vec![0.0; fam.dim];
        let mut sq = vec![0.0; fam.dim];
        for _ in 0..n {
            let e = fam.sample(&mut rng);
            for i in 0..fam.dim {
                mean[i] += e[i];
                sq[i] += e[i] * e[i];
            }
        }
        let mean: Vec<f64> = mean.iter().map(|m| m / n as f64).collect();
        let var = sq.iter().zip(&mean).map(|(s, m)| s / n as f64 - m * m).collect();
        (mean, var)
    }

    #[test]
    fn zero_sigma_gives_zero() {
        let mut rng = RngState::new(1, 0);
        assert_eq!(NoiseFamily::gaussian(0.0, 3).sample(&mut rng).norm(), 0.0);
        assert_eq!(NoiseFamily::uniform(0.0, 3).sample(&mut rng).norm(), 0.0);
        let fam = NoiseFamily::gaussian(0.0, 2);
        assert_eq!(noise_decay_check(&fam, 0.1, 0.0, 2.0, 1.0, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn bernoulli_half_support() {
        let fam = NoiseFamily::bernoulli(0.5, 1).unwrap();
        let mut rng = RngState::new(2, 0);
        for _ in 0..100 {
            let x = fam.sample(&mut rng)[0];
            assert!(x == -1.0 || x == 1.0);
        }
        assert!((fam.sigma() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_variance_within_one_percent() {
        let fam = NoiseFamily::gaussian(0.03, 1);
        let (mean, var) = mc_moments(&fam, 1_000_000, 3);
        assert!((var[0] - 9e-4).abs() < 9e-6);
        assert!(mean[0].abs() < 4.0 * 0.03 / 1000.0);
    }

    #[test]
    fn all_families_centered_with_variance_sigma_sq() {
        let n = 200_000;
        let fams = vec![
            NoiseFamily::gaussian(0.4, 2),
            NoiseFamily::uniform(0.4, 2),
            NoiseFamily::bernoulli(0.2, 2).unwrap(),
            NoiseFamily::bernoulli_with_sigma(0.3, 2).unwrap(),
        ];
        for fam in fams {
            let s = fam.sigma();
            let (mean, var) = mc_moments(&fam, n, 4);
            // Bernoulli variance has a larger fourth moment; widen by the kurtosis.
            let m4 = fam.analytic_moment(4).unwrap();
            let var_sd = ((m4 - s.powi(4)) / n as f64).sqrt();
            for i in 0..2 {
                assert!(mean[i].abs() < 4.0 * s / (n as f64).sqrt(), "{}", fam.kind_name());
                assert!((var[i] - s * s).abs() < 4.0 * var_sd, "{}", fam.kind_name());
            }
        }
    }

    #[test]
    fn closed_form_moments() {
        let g = NoiseFamily::gaussian(0.3, 1);
        assert!((g.analytic_moment(2).unwrap() - 0.09).abs() < 1e-15);
        assert!((g.analytic_moment(4).unwrap() - 3.0 * 0.3f64.powi(4)).abs() < 1e-15);
        let u = NoiseFamily::uniform(0.3, 1);
        assert!((u.analytic_moment(4).unwrap() - 1.8 * 0.3f64.powi(4)).abs() < 1e-15);
        let p = 0.2;
        let b = NoiseFamily::bernoulli(p, 1).unwrap();
        let expect = p + p.powi(3) / (1.0 - p).powi(2);
        assert!((b.analytic_moment(3).unwrap() - expect).abs() < 1e-15);
        let c = NoiseFamily::correlated(Matrix::identity(2, 2)).unwrap();
        assert!(matches!(c.analytic_moment(2), Err(Error::NotAvailable(_))));
        assert_eq!(b.moment_scaling(), Some(MomentScaling::Quadratic));
    }

    #[test]
    fn moments_match_monte_carlo() {
        let n = 400_000;
        for (fam, k) in [
            (NoiseFamily::bernoulli(0.2, 1).unwrap(), 3),
            (NoiseFamily::uniform(0.5, 1), 4),
            (NoiseFamily::gaussian(0.5, 1), 3),
        ] {
            let mut rng = RngState::new(5, 0);
            let mc: f64 = (0..n).map(|_| fam.sample(&mut rng)[0].abs().powi(k)).sum::<f64>() / n as f64;
            let exact = fam.analytic_moment(k as u32).unwrap();
            assert!((mc - exact).abs() < 0.02 * exact, "{} {mc} {exact}", fam.kind_name());
        }
    }

    #[test]
    fn rank_one_correlated_covariance() {
        let s2 = 0.04;
        let c = Matrix::from_row_slice(2, 2, &[s2 / 2.0, s2 / 2.0, s2 / 2.0, s2 / 2.0]);
        let fam = NoiseFamily::correlated(c.clone()).unwrap();
        let mut rng = RngState::new(6, 0);
        let n = 1_000_000;
        let mut emp = Matrix::zeros(2, 2);
        for _ in 0..n {
            let e = fam.sample(&mut rng);
            emp.ger(1.0, &e, &e, 1.0);
        }
        emp /= n as f64;
        assert!((&emp - &c).norm() < 0.05 * c.norm());
        assert!(NoiseFamily::correlated(Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
    }

    #[test]
    fn streams_are_reproducible() {
        let fam = NoiseFamily::gaussian(1.0, 4);
        let mut a = RngState::new(42, 3);
        let mut b = RngState::new(42, 3);
        for _ in 0..100 {
            assert_eq!(fam.sample(&mut a), fam.sample(&mut b));
        }
        let mut c = RngState::new(42, 4);
        assert_ne!(fam.sample(&mut RngState::new(42, 3)), fam.sample(&mut c));
    }

    #[test]
    fn bernoulli_decay_statistic_saturates_at_alpha() {
        let fam = NoiseFamily::bernoulli(0.1, 1).unwrap();
        let mut rng = RngState::new(7, 0);
        let stat = noise_decay_check(&fam, 0.05, fam.sigma(), 2.0, 1.0, &mut rng).unwrap();
        assert_eq!(stat, 0.05);
    }

    #[test]
    fn decay_budget_enforced() {
        let fam = NoiseFamily::gaussian(1e-6, 1);
        let mut rng = RngState::new(0, 0);
        assert!(matches!(
            noise_decay_check(&fam, 1e-3, 1e-6, 2.0, 1.0, &mut rng),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn minibatch_family() {
        let fam = NoiseFamily::minibatch(8, 4).unwrap();
        assert!((fam.sigma() - 1.0).abs() < 1e-15);
        let full = NoiseFamily::minibatch(8, 8).unwrap();
        let mut rng = RngState::new(0, 0);
        assert_eq!(full.sample(&mut rng).norm(), 0.0);
        assert!(NoiseFamily::minibatch(8, 0).is_err());
        assert!(NoiseFamily::minibatch(8, 9).is_err());
    }

    use proptest::prelude::*;
    proptest! {
        #[test]
        fn gaussian_decay_shrinks_in_median(seed in 0u64..1000) {
            // Median over a handful of streams; α halved twice.
            let fam = NoiseFamily::gaussian(1.0, 1);
            let med = |alpha: f64| {
                let mut v: Vec<f64> = (0..15).map(|i| {
                    let mut r = RngState::new(seed, i);
                    noise_decay_check(&fam, alpha, 1.0, 2.0, 1.0, &mut r).unwrap()
                }).collect();
                v.sort_by(f64::total_cmp);
                v[7]
            };
            prop_assert!(med(0.2) > med(0.05));
        }
    }
}
