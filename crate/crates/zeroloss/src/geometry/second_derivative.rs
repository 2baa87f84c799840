//! Third-derivative contractions and the second derivative of Φ on Γ.

use super::{
    lyapunov_pseudo_solve, pseudo_inverse, spectral_split, GapThreshold, ProjectorPair, SpectralSplit, ON_MANIFOLD_TOL,
};
use crate::losses::Loss;
use crate::{numdiff, Error, Matrix, ParamVector, Result};

/// Slices T_i = ∂_i ∇²L(w), by central differences of the Hessian.
#[derive(Clone, Debug)]
pub struct ThirdDerivative {
    pub slices: Vec<Matrix>,
}

impl ThirdDerivative {
    pub fn compute(loss: &dyn Loss, w: &ParamVector, h: f64) -> Self {
        let mut x = w.clone();
        let slices = (0..w.len())
            .map(|i| {
                x[i] = w[i] + h;
                let hp = loss.hessian(&x);
                x[i] = w[i] - h;
                let hm = loss.hessian(&x);
                x[i] = w[i];
                let t = (hp - hm) / (2.0 * h);
                (&t + t.transpose()) * 0.5
            })
            .collect();
        Self { slices }
    }

    /// ∂²(∇L)[M], the vector with components ⟨∂_i∇²L, M⟩.
    pub fn contract(&self, m: &Matrix) -> ParamVector {
        ParamVector::from_iterator(self.slices.len(), self.slices.iter().map(|t| t.dot(m)))
    }

    /// ∇ tr ∇²L = ∂²(∇L)[I].
    pub fn laplacian_gradient(&self) -> ParamVector {
        ParamVector::from_iterator(self.slices.len(), self.slices.iter().map(|t| t.trace()))
    }
}

/// Cached local geometry at a point of Γ.
#[derive(Clone, Debug)]
pub struct ManifoldPoint {
    pub w: ParamVector,
    pub hessian: Matrix,
    pub split: SpectralSplit,
    pub proj: ProjectorPair,
    pub pinv: Matrix,
    pub third: ThirdDerivative,
}

impl ManifoldPoint {
    pub fn new(loss: &dyn Loss, w: &ParamVector, gap: GapThreshold, tol_grad: f64) -> Result<Self> {
        let g = loss.gradient(w).norm();
        if !(g < tol_grad) {
            return Err(Error::OffManifold {
                grad_norm: g,
                tol: tol_grad,
            });
        }
        let hessian = loss.hessian(w);
        let split = spectral_split(&hessian, gap)?;
        split.require_clear_gap()?;
        let proj = split.projectors();
        let pinv = pseudo_inverse(&split);
        let third = ThirdDerivative::compute(loss, w, numdiff::THIRD_STEP);
        Ok(Self {
            w: w.clone(),
            hessian,
            split,
            proj,
            pinv,
            third,
        })
    }

    pub fn at(loss: &dyn Loss, w: &ParamVector) -> Result<Self> {
        Self::new(loss, w, GapThreshold::default(), ON_MANIFOLD_TOL)
    }

    /// ∂²Φ[Σ] = −(∇²L)†∂²(∇L)[PΣP] − P∂²(∇L)[L†(QΣQ)] − 2P∂²(∇L)[(∇²L)†QΣP].
    ///
    /// Signs follow from differentiating ∇L(Φ(x)) = 0 twice; they are
    /// checked against second differences of Φ in the tests.
    pub fn phi_second(&self, sigma: &Matrix) -> ParamVector {
        let (p, q) = (&self.proj.p, &self.proj.q);
        let psp = p * sigma * p;
        let qsq = q * sigma * q;
        let cross = &self.pinv * q * sigma * p;
        let lyap = lyapunov_pseudo_solve(&self.split, &qsq);
        -(&self.pinv * self.third.contract(&psp))
            - p * self.third.contract(&lyap)
            - p * self.third.contract(&cross) * 2.0
    }

    /// ∂²Φ[∇²L] = −½P∇ΔL.
    pub fn phi_second_hessian(&self) -> ParamVector {
        &self.proj.p * self.third.laplacian_gradient() * -0.5
    }

    /// ∇ log|∇²L|₊ from the third derivative: ⟨∂_i∇²L, (∇²L)†⟩.
    pub fn log_pdet_gradient(&self) -> ParamVector {
        self.third.contract(&self.pinv)
    }

    /// ∂²Φ[I] = −(∇²L)†∂²(∇L)[P] − ½P∇log|∇²L|₊.
    pub fn phi_second_identity(&self, log_pdet_grad: &ParamVector) -> ParamVector {
        -(&self.pinv * self.third.contract(&self.proj.p)) - &self.proj.p * log_pdet_grad * 0.5
    }

    pub fn tangent(&self, v: &ParamVector) -> ParamVector {
        &self.proj.p * v
    }
}

/// General formula for ∂²Φ(w)[Σ].
pub fn phi_second_derivative(
    loss: &dyn Loss,
    w: &ParamVector,
    sigma: &Matrix,
    gap: GapThreshold,
) -> Result<ParamVector> {
    Ok(ManifoldPoint::new(loss, w, gap, ON_MANIFOLD_TOL)?.phi_second(sigma))
}

/// ∂²Φ(w)[∇²L] = −½P∇ΔL.
pub fn phi_second_derivative_hessian(loss: &dyn Loss, w: &ParamVector, gap: GapThreshold) -> Result<ParamVector> {
    Ok(ManifoldPoint::new(loss, w, gap, ON_MANIFOLD_TOL)?.phi_second_hessian())
}

/// ∂²Φ(w)[I] = (∇²L)†∂²(∇L)[P] − ½P∇log|∇²L|₊, with the log-determinant
/// gradient taken by finite differences.
pub fn phi_second_derivative_identity(
    loss: &dyn Loss,
    w: &ParamVector,
    gap: GapThreshold,
    h: f64,
) -> Result<ParamVector> {
    let mp = ManifoldPoint::new(loss, w, gap, ON_MANIFOLD_TOL)?;
    let lg = pseudo_determinant_log_grad(loss, w, gap, h)?;
    Ok(mp.phi_second_identity(&lg))
}

/// P∇ log|∇²L|₊ by central differences of the log pseudo-determinant.
///
/// The rank is fixed at the base point; a stencil point whose spectrum
/// crosses δ is an error rather than a silent rank change.
pub fn pseudo_determinant_log_grad(loss: &dyn Loss, w: &ParamVector, gap: GapThreshold, h: f64) -> Result<ParamVector> {
    let g = loss.gradient(w).norm();
    if !(g < ON_MANIFOLD_TOL) {
        return Err(Error::OffManifold {
            grad_norm: g,
            tol: ON_MANIFOLD_TOL,
        });
    }
    let base = spectral_split(&loss.hessian(w), gap)?;
    base.require_clear_gap()?;
    let delta = base.delta;
    let at = |x: &ParamVector| -> Result<f64> {
        let s = spectral_split(&loss.hessian(x), GapThreshold::Absolute(delta))?;
        s.require_clear_gap()?;
        if s.rank != base.rank {
            return Err(Error::AmbiguousGap {
                eigenvalue: s.eigenvalues[s.rank.min(base.rank)],
                delta,
            });
        }
        Ok(s.log_pseudo_determinant())
    };
    let mut grad = ParamVector::zeros(w.len());
    let mut x = w.clone();
    for i in 0..w.len() {
        x[i] = w[i] + h;
        let fp = at(&x)?;
        x[i] = w[i] - h;
        let fm = at(&x)?;
        x[i] = w[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(base.projectors().p * grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{limit_map_phi, PhiOptions};
    use crate::losses::{Quadratic, RingSine};

    fn on_circle(t: f64) -> ParamVector {
        ParamVector::from_vec(vec![t.cos(), t.sin()])
    }

    #[test]
    fn zero_sigma_gives_zero() {
        let ring = RingSine::default();
        let r = phi_second_derivative(&ring, &on_circle(0.7), &Matrix::zeros(2, 2), GapThreshold::default()).unwrap();
        assert_eq!(r.norm(), 0.0);
    }

    #[test]
    fn hessian_special_case_matches_general() {
        let ring = RingSine::default();
        for k in 0..8 {
            let w = on_circle(0.3 + 0.77 * k as f64);
            let mp = ManifoldPoint::at(&ring, &w).unwrap();
            let general = mp.phi_second(&mp.hessian);
            let special = mp.phi_second_hessian();
            assert!((general - special).norm() < 1e-6);
        }
    }

    #[test]
    fn log_pdet_gradient_on_ring() {
        let ring = RingSine::default();
        for k in 0..8 {
            let t = 0.4 + 0.71 * k as f64;
            let w = on_circle(t);
            let g = pseudo_determinant_log_grad(&ring, &w, GapThreshold::default(), 1e-5).unwrap();
            // d/dθ log(2(1 + 0.7 sin(5 cos θ))) along the unit tangent.
            let deriv = ring.half_laplacian_on_circle_deriv(t) / ring.half_laplacian_on_circle(t);
            let tangent = ParamVector::from_vec(vec![-t.sin(), t.cos()]);
            assert!(
                (&g - &tangent * deriv).norm() < 1e-4,
                "θ={t}: {g} vs {}",
                &tangent * deriv
            );
            let mp = ManifoldPoint::at(&ring, &w).unwrap();
            assert!((mp.tangent(&mp.log_pdet_gradient()) - &g).norm() < 1e-5);
        }
        let q = Quadratic::new(Matrix::from_diagonal(&ParamVector::from_vec(vec![3.0, 0.0])));
        let g = pseudo_determinant_log_grad(&q, &ParamVector::zeros(2), GapThreshold::default(), 1e-5).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn pseudo_determinant_shrinks_toward_flat_region() {
        // log|∇²L|₊ is smallest where sin(5 cos θ) = −1.
        let ring = RingSine::default();
        let flat = (-std::f64::consts::PI / 10.0).acos();
        let pd = |t: f64| {
            let s = spectral_split(&ring.hessian(&on_circle(t)), GapThreshold::default()).unwrap();
            s.log_pseudo_determinant()
        };
        assert!(pd(flat) < pd(std::f64::consts::FRAC_PI_2));
    }

    #[test]
    fn identity_case_matches_phi_second_differences() {
        let ring = RingSine::default();
        let opts = PhiOptions {
            rk_tol: 1e-13,
            tol_grad: 1e-11,
            ..PhiOptions::default()
        };
        let phi = |x: &ParamVector| limit_map_phi(&ring, x, &opts).unwrap().point;
        for t in [0.5, 1.9, 4.0] {
            let w = on_circle(t);
            let formula = phi_second_derivative_identity(&ring, &w, GapThreshold::default(), 1e-5).unwrap();
            let general = ManifoldPoint::at(&ring, &w)
                .unwrap()
                .phi_second(&Matrix::identity(2, 2));
            assert!((&formula - &general).norm() < 1e-6);
            let base = phi(&w);
            let lap_at = |h: f64| {
                let mut lap = ParamVector::zeros(2);
                for i in 0..2 {
                    let mut e = ParamVector::zeros(2);
                    e[i] = h;
                    lap += (phi(&(&w + &e)) + phi(&(&w - &e)) - &base * 2.0) / (h * h);
                }
                lap
            };
            // Richardson extrapolation removes the O(h²) stencil error.
            let lap = (lap_at(5e-3) * 4.0 - lap_at(1e-2)) / 3.0;
            assert!((&formula - &lap).norm() < 1e-4, "θ={t}: {formula} vs {lap}");
        }
    }

    #[test]
    fn general_sigma_matches_phi_second_differences() {
        // Σ = vvᵀ with v mixing tangent and normal exercises all three terms.
        let ring = RingSine::default();
        let opts = PhiOptions {
            rk_tol: 1e-13,
            tol_grad: 1e-11,
            ..PhiOptions::default()
        };
        let phi = |x: &ParamVector| limit_map_phi(&ring, x, &opts).unwrap().point;
        for t in [0.5, 2.3] {
            let w = on_circle(t);
            let n = w.clone();
            let tau = ParamVector::from_vec(vec![-w[1], w[0]]);
            for (a, b) in [(1.0, 1.0), (1.0, -0.5), (0.0, 1.0)] {
                let v = &tau * a + &n * b;
                let formula = ManifoldPoint::at(&ring, &w).unwrap().phi_second(&(&v * v.transpose()));
                let d2 = |h: f64| (phi(&(&w + &v * h)) + phi(&(&w - &v * h)) - phi(&w) * 2.0) / (h * h);
                let fd = (d2(5e-3) * 4.0 - d2(1e-2)) / 3.0;
                assert!((&formula - &fd).norm() < 1e-4, "θ={t}: {formula} vs {fd}");
            }
        }
    }
}
