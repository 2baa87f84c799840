//! Local geometry of the zero-loss set Γ.
//!
//! Everything here is read off the Hessian: its spectral split gives the
//! tangent projector P (kernel) and normal projector Q (range), the
//! pseudo-inverse and the Lyapunov pseudo-solve used in ∂²Φ.

mod limit_map;
mod second_derivative;

pub use limit_map::{limit_map_phi, PhiOptions, PhiResult};
pub use second_derivative::{
    phi_second_derivative, phi_second_derivative_hessian, phi_second_derivative_identity, pseudo_determinant_log_grad,
    ManifoldPoint, ThirdDerivative,
};

use crate::losses::Loss;
use crate::{Error, Matrix, ParamVector, Result};

/// Default tolerance on ‖∇L‖ for a point to count as lying on Γ.
pub const ON_MANIFOLD_TOL: f64 = 1e-6;

/// Threshold separating "zero" from "non-zero" Hessian eigenvalues.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GapThreshold {
    Absolute(f64),
    /// Fraction of the largest eigenvalue.
    Relative(f64),
}

impl Default for GapThreshold {
    fn default() -> Self {
        GapThreshold::Relative(1e-3)
    }
}

impl GapThreshold {
    pub fn resolve(&self, lambda_max: f64) -> f64 {
        match *self {
            GapThreshold::Absolute(d) => d,
            GapThreshold::Relative(r) => (r * lambda_max).max(1e-300),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralSplit {
    /// Descending.
    pub eigenvalues: ParamVector,
    /// Columns are eigenvectors, in the same order.
    pub eigenvectors: Matrix,
    pub rank: usize,
    pub delta: f64,
    /// Eigenvalue found inside [δ/2, 2δ], if any.
    pub ambiguous: Option<f64>,
}

pub fn spectral_split(h: &Matrix, gap: GapThreshold) -> Result<SpectralSplit> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: h.ncols(),
        });
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite Hessian".into()));
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = ParamVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = Matrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    let lmax = if n > 0 { eigenvalues[0] } else { 0.0 };
    let delta = gap.resolve(lmax);
    let rank = eigenvalues.iter().filter(|&&l| l > delta).count();
    let ambiguous = eigenvalues
        .iter()
        .copied()
        .find(|&l| l >= 0.5 * delta && l <= 2.0 * delta);
    Ok(SpectralSplit {
        eigenvalues,
        eigenvectors,
        rank,
        delta,
        ambiguous,
    })
}

impl SpectralSplit {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn require_clear_gap(&self) -> Result<()> {
        match self.ambiguous {
            Some(eigenvalue) => Err(Error::AmbiguousGap {
                eigenvalue,
                delta: self.delta,
            }),
            None => Ok(()),
        }
    }

    fn spectral_function(&self, f: impl Fn(usize, f64) -> f64) -> Matrix {
        let d = ParamVector::from_iterator(self.dim(), self.eigenvalues.iter().enumerate().map(|(i, &l)| f(i, l)));
        &self.eigenvectors * Matrix::from_diagonal(&d) * self.eigenvectors.transpose()
    }

    pub fn reconstruct(&self) -> Matrix {
        self.spectral_function(|_, l| l)
    }

    pub fn projectors(&self) -> ProjectorPair {
        let r = self.rank;
        let p = self.spectral_function(|i, _| if i >= r { 1.0 } else { 0.0 });
        let n = self.dim();
        let q = Matrix::identity(n, n) - &p;
        ProjectorPair {
            p,
            q,
            manifold_dim: n - r,
        }
    }

    /// Product of the eigenvalues above δ.
    pub fn log_pseudo_determinant(&self) -> f64 {
        self.eigenvalues.iter().take(self.rank).map(|l| l.ln()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct ProjectorPair {
    /// Tangent projector (kernel of the Hessian).
    pub p: Matrix,
    /// Normal projector, I − P.
    pub q: Matrix,
    pub manifold_dim: usize,
}

pub fn tangent_projector(loss: &dyn Loss, w: &ParamVector, gap: GapThreshold, tol_grad: f64) -> Result<ProjectorPair> {
    let g = loss.gradient(w).norm();
    if !(g < tol_grad) {
        return Err(Error::OffManifold {
            grad_norm: g,
            tol: tol_grad,
        });
    }
    let split = spectral_split(&loss.hessian(w), gap)?;
    split.require_clear_gap()?;
    Ok(split.projectors())
}

/// Moore–Penrose pseudo-inverse relative to the split threshold.
pub fn pseudo_inverse(split: &SpectralSplit) -> Matrix {
    let r = split.rank;
    split.spectral_function(|i, l| if i < r { 1.0 / l } else { 0.0 })
}

/// Solves HX + XH = S on the eigenspaces where λ_i + λ_j > δ.
pub fn lyapunov_pseudo_solve(split: &SpectralSplit, s: &Matrix) -> Matrix {
    let v = &split.eigenvectors;
    let mut st = v.transpose() * s * v;
    let n = split.dim();
    for i in 0..n {
        for j in 0..n {
            let den = split.eigenvalues[i] + split.eigenvalues[j];
            st[(i, j)] = if den > split.delta { st[(i, j)] / den } else { 0.0 };
        }
    }
    v * st * v.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{Quadratic, RingSine};
    use proptest::prelude::*;

    fn diag(d: &[f64]) -> Matrix {
        Matrix::from_diagonal(&ParamVector::from_vec(d.to_vec()))
    }

    #[test]
    fn trivial_splits() {
        let s = spectral_split(&Matrix::zeros(3, 3), GapThreshold::default()).unwrap();
        assert_eq!(s.rank, 0);
        assert_eq!(s.projectors().p, Matrix::identity(3, 3));

        let s = spectral_split(&diag(&[2.0, 0.0]), GapThreshold::Absolute(0.5)).unwrap();
        assert_eq!(s.rank, 1);
        let pp = s.projectors();
        assert!((pp.p - diag(&[0.0, 1.0])).norm() < 1e-15);
        assert!((pseudo_inverse(&s) - diag(&[0.5, 0.0])).norm() < 1e-15);

        let id = spectral_split(&Matrix::identity(3, 3), GapThreshold::default()).unwrap();
        assert!((pseudo_inverse(&id) - Matrix::identity(3, 3)).norm() < 1e-15);
        let sm = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, 2.0, -1.0, 0.3, 0.5, 0.3, 4.0]);
        assert!((lyapunov_pseudo_solve(&id, &sm) - &sm * 0.5).norm() < 1e-14);
        let x = lyapunov_pseudo_solve(&s, &diag(&[1.0, 0.0]));
        assert!((x - diag(&[0.25, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn ambiguous_gap_is_flagged() {
        let s = spectral_split(&diag(&[2.0, 0.6]), GapThreshold::Absolute(0.5)).unwrap();
        assert!(s.ambiguous.is_some());
        assert!(matches!(s.require_clear_gap(), Err(Error::AmbiguousGap { .. })));
    }

    #[test]
    fn ring_projectors() {
        let ring = RingSine::default();
        let w = ParamVector::from_vec(vec![0.0, 1.0]);
        let s = spectral_split(&ring.hessian(&w), GapThreshold::Absolute(0.5)).unwrap();
        assert_eq!(s.rank, 1);
        assert!((s.eigenvalues[0] - 2.0).abs() < 1e-12);
        let pp = tangent_projector(&ring, &w, GapThreshold::default(), ON_MANIFOLD_TOL).unwrap();
        assert!((pp.p - diag(&[1.0, 0.0])).norm() < 1e-12);
        for k in 0..12 {
            let t = 0.2 + 0.5 * k as f64;
            let w = ParamVector::from_vec(vec![t.cos(), t.sin()]);
            let pp = tangent_projector(&ring, &w, GapThreshold::default(), ON_MANIFOLD_TOL).unwrap();
            let tangent = ParamVector::from_vec(vec![-t.sin(), t.cos()]);
            assert!((&pp.p * &tangent - &tangent).norm() < 1e-12);
            assert!((&pp.p * &w).norm() < 1e-12);
        }
        let off = ParamVector::from_vec(vec![0.0, 1.3]);
        assert!(matches!(
            tangent_projector(&ring, &off, GapThreshold::default(), ON_MANIFOLD_TOL),
            Err(Error::OffManifold { .. })
        ));
        let flat = Quadratic::new(Matrix::zeros(2, 2));
        let pp = tangent_projector(&flat, &w, GapThreshold::default(), 1e-6).unwrap();
        assert_eq!(pp.p, Matrix::identity(2, 2));
    }

    fn arb_rank_deficient() -> impl Strategy<Value = Matrix> {
        (2usize..6, 1usize..4, proptest::collection::vec(-1.0f64..1.0, 36)).prop_map(|(n, r, vals)| {
            let r = r.min(n - 1);
            let b = Matrix::from_fn(n, r, |i, j| vals[i * 6 + j]);
            let c = Matrix::from_fn(r, n, |i, j| vals[(i + 3) * 6 + j % 6]);
            b * c
        })
    }

    fn arb_psd() -> impl Strategy<Value = (Matrix, Matrix)> {
        (2usize..6, proptest::collection::vec(-1.0f64..1.0, 72)).prop_map(|(n, vals)| {
            let r = n - 1;
            let b = Matrix::from_fn(n, r, |i, j| vals[i * 6 + j]);
            let s = Matrix::from_fn(n, n, |i, j| vals[36 + i * 6 + j]);
            (&b * b.transpose(), &s + s.transpose())
        })
    }

    proptest! {
        #[test]
        fn projector_algebra((h, _s) in arb_psd()) {
            let split = spectral_split(&h, GapThreshold::default()).unwrap();
            prop_assume!(split.ambiguous.is_none());
            let pp = split.projectors();
            prop_assert!((&pp.p * &pp.p - &pp.p).norm() < 1e-10);
            prop_assert!((&pp.p - pp.p.transpose()).norm() < 1e-10);
            prop_assert!((&pp.p * &pp.q).norm() < 1e-10);
            prop_assert!((pp.p.trace() - pp.manifold_dim as f64).abs() < 1e-10);
            prop_assert!((split.reconstruct() - &h).norm() <= 1e-10 * h.norm().max(1e-300));
        }

        #[test]
        fn penrose_identities(a in arb_rank_deficient()) {
            // Symmetric rank-deficient matrix.
            let h = &a * a.transpose();
            let split = spectral_split(&h, GapThreshold::Relative(1e-8)).unwrap();
            let p = pseudo_inverse(&split);
            let scale = h.norm().max(1.0);
            prop_assert!((&p * &h * &p - &p).norm() < 1e-8 * p.norm().max(1.0) * scale);
            prop_assert!((&h * &p * &h - &h).norm() < 1e-8 * scale);
        }

        #[test]
        fn lyapunov_forward_apply((h, s) in arb_psd()) {
            let split = spectral_split(&h, GapThreshold::default()).unwrap();
            prop_assume!(split.ambiguous.is_none());
            let pp = split.projectors();
            let qsq = &pp.q * &s * &pp.q;
            let x = lyapunov_pseudo_solve(&split, &qsq);
            let back = &h * &x + &x * &h;
            prop_assert!((back - &qsq).norm() < 1e-8 * qsq.norm().max(1.0));
        }
    }
}
