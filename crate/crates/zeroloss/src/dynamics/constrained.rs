//! Limiting dynamics on Γ: constrained gradient flow and constrained SDE.
//!
//! Both integrators take an explicit step in the ambient space and retract
//! onto Γ by relaxing the gradient flow of L, i.e. by applying Φ.

use rand_distr::{Distribution, StandardNormal};

use super::{diagnose, Trajectory};
use crate::geometry::{limit_map_phi, tangent_projector, GapThreshold, ManifoldPoint, PhiOptions, ON_MANIFOLD_TOL};
use crate::losses::Loss;
use crate::noise::{NoiseFamily, RngState};
use crate::regularizers::noise_covariance;
use crate::schemes::DegenerateParts;
use crate::{Error, ParamVector, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMethod {
    Euler,
    /// Predictor-corrector (explicit trapezoid); deterministic flows only.
    Heun,
}

#[derive(Clone, Debug)]
pub struct ConstrainedOptions {
    pub dt: f64,
    pub method: StepMethod,
    /// Record every n-th step (the final point is always kept).
    pub record_every: usize,
    pub max_halvings: usize,
    pub gap: GapThreshold,
    /// Gradient tolerance defining "on Γ" for the projector.
    pub tol_on: f64,
    pub retraction: PhiOptions,
    /// Largest accepted normal displacement of a retraction relative to dt.
    pub max_retraction_ratio: f64,
}

impl Default for ConstrainedOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            method: StepMethod::Euler,
            record_every: 1,
            max_halvings: 20,
            gap: GapThreshold::default(),
            tol_on: ON_MANIFOLD_TOL,
            retraction: PhiOptions {
                tol_grad: 1e-11,
                ..PhiOptions::default()
            },
            max_retraction_ratio: 1e3,
        }
    }
}

fn retract(loss: &dyn Loss, x: &ParamVector, opts: &ConstrainedOptions) -> Result<ParamVector> {
    let r = limit_map_phi(loss, x, &opts.retraction)?;
    if r.grad_norm >= opts.tol_on {
        return Err(Error::OffManifold {
            grad_norm: r.grad_norm,
            tol: opts.tol_on,
        });
    }
    Ok(r.point)
}

fn check_start(loss: &dyn Loss, y0: &ParamVector, tol: f64) -> Result<()> {
    let g = loss.gradient(y0).norm();
    if !(g < tol) {
        return Err(Error::OffManifold { grad_norm: g, tol });
    }
    Ok(())
}

fn record_point(loss: &dyn Loss, traj: &mut Trajectory, t: f64, y: &ParamVector) {
    traj.push(t, y.clone(), diagnose(loss, y, true));
}

/// dY/dt = −P(Y)∇Reg(Y) with Y on Γ.
pub fn constrained_gradient_flow<G>(
    loss: &dyn Loss,
    reg_grad: G,
    y0: &ParamVector,
    t_end: f64,
    opts: &ConstrainedOptions,
) -> Result<Trajectory>
where
    G: Fn(&ParamVector) -> ParamVector,
{
    check_start(loss, y0, opts.tol_on)?;
    let velocity = |y: &ParamVector| -> Result<ParamVector> {
        let p = tangent_projector(loss, y, opts.gap, opts.tol_on)?;
        Ok(-(&p.p * reg_grad(y)))
    };
    let mut traj = Trajectory::new();
    let mut y = y0.clone();
    let mut t = 0.0;
    let mut k = 0usize;
    record_point(loss, &mut traj, 0.0, &y);
    while t < t_end * (1.0 - 1e-14) {
        let v = velocity(&y)?;
        let mut dt = opts.dt.min(t_end - t);
        let mut halvings = 0;
        let y_next = loop {
            let attempt = (|| -> Result<ParamVector> {
                let pred = retract(loss, &(&y + &v * dt), opts)?;
                let out = match opts.method {
                    StepMethod::Euler => pred,
                    StepMethod::Heun => {
                        let v2 = velocity(&pred)?;
                        retract(loss, &(&y + (&v + v2) * (0.5 * dt)), opts)?
                    }
                };
                let normal_jump = (&out - &y).norm() - v.norm() * dt;
                if normal_jump > opts.max_retraction_ratio * dt * v.norm().max(1.0) {
                    return Err(Error::Numeric("retraction jumped".into()));
                }
                Ok(out)
            })();
            match attempt {
                Ok(p) => break p,
                Err(e) if halvings >= opts.max_halvings => return Err(e),
                Err(_) => {
                    dt *= 0.5;
                    halvings += 1;
                }
            }
        };
        t += dt;
        y = y_next;
        k += 1;
        if k.is_multiple_of(opts.record_every.max(1)) || t >= t_end * (1.0 - 1e-14) {
            record_point(loss, &mut traj, t, &y);
        }
    }
    Ok(traj)
}

/// Source of Brownian increments over one SDE step.
pub trait BrownianSource {
    /// n independent increments with variance dt each.
    fn increments(&mut self, n: usize, dt: f64) -> Result<ParamVector>;
}

pub struct GaussianBrownian {
    pub rng: RngState,
}

impl BrownianSource for GaussianBrownian {
    fn increments(&mut self, n: usize, dt: f64) -> Result<ParamVector> {
        let s = dt.sqrt();
        Ok(ParamVector::from_fn(n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            s * z
        }))
    }
}

/// Increments built as `coef · Σ η` over blocks of consecutive noise draws.
///
/// Fed with the same stream as a noisy GD run, this couples the SDE to the
/// discrete process path by path: for a degenerate scheme with
/// ∇_w L̂ = ∇L + ∇f·η, a block of `block` steps contributes −α Σ η to the
/// noise, so `coef = −α` and dt = block · α²σ².
pub struct BlockSumBrownian {
    pub family: NoiseFamily,
    pub rng: RngState,
    pub block: usize,
    pub coef: f64,
}

impl BrownianSource for BlockSumBrownian {
    fn increments(&mut self, n: usize, _dt: f64) -> Result<ParamVector> {
        if n != self.family.dim {
            return Err(Error::Dimension {
                expected: self.family.dim,
                got: n,
            });
        }
        let mut acc = ParamVector::zeros(n);
        let mut eta = ParamVector::zeros(n);
        for _ in 0..self.block {
            self.family.sample_into(&mut self.rng, eta.as_mut_slice());
            acc += &eta;
        }
        Ok(acc * self.coef)
    }
}

/// Euler–Maruyama for
/// dY = P(∇f·db + σ₀ Σ_{k<l} ∇H_kl dB_kl) + ½∂²Φ(Y)[Σ(Y)] dt, followed by
/// retraction onto Γ.
pub fn constrained_sde(
    loss: &dyn Loss,
    parts: &dyn DegenerateParts,
    sigma0: f64,
    y0: &ParamVector,
    t_end: f64,
    opts: &ConstrainedOptions,
    brownian: &mut dyn BrownianSource,
) -> Result<Trajectory> {
    check_start(loss, y0, opts.tol_on)?;
    let d = parts.noise_dim();
    let mut traj = Trajectory::new();
    let mut y = y0.clone();
    let mut t = 0.0;
    let mut k = 0usize;
    record_point(loss, &mut traj, 0.0, &y);
    let n_steps = (t_end / opts.dt * (1.0 - 1e-12)).ceil() as usize;
    for _ in 0..n_steps {
        let dt = opts.dt.min(t_end - t);
        let mp = ManifoldPoint::new(loss, &y, opts.gap, opts.tol_on)?;
        let jac = parts.f_jacobian(&y);
        let hg = parts.h_gradients(&y);
        let inc = brownian.increments(d + hg.len(), dt)?;
        let mut kick = &jac * inc.rows(0, d);
        for (i, (_, _, g)) in hg.iter().enumerate() {
            kick.axpy(sigma0 * inc[d + i], g, 1.0);
        }
        let sigma = noise_covariance(parts, &y, sigma0);
        let drift = mp.phi_second(&sigma) * 0.5;
        let x = &y + &mp.proj.p * kick + drift * dt;
        y = retract(loss, &x, opts)?;
        t += dt;
        k += 1;
        if k.is_multiple_of(opts.record_every.max(1)) || k == n_steps {
            record_point(loss, &mut traj, t, &y);
        }
    }
    Ok(traj)
}
