use super::{pseudo_inverse, spectral_split, GapThreshold};
use crate::dynamics::ode::Rk4Stepper;
use crate::losses::Loss;
use crate::{check_finite, Error, ParamVector, Result};

#[derive(Clone, Debug)]
pub struct PhiOptions {
    /// Stop integrating once ‖∇L‖ falls below this.
    pub tol_grad: f64,
    /// A limit with larger loss is a spurious critical point, not a point of Γ.
    pub tol_loss: f64,
    /// Per-step error target of the integrator.
    pub rk_tol: f64,
    /// Largest allowed integration step.
    pub dt_max: f64,
    pub max_time: f64,
    pub max_steps: usize,
    /// Apply the final normal correction x ← x − (∇²L)†∇L.
    pub newton: bool,
    pub gap: GapThreshold,
    /// Keep (t, ‖∇L‖) after every step.
    pub keep_log: bool,
}

impl Default for PhiOptions {
    fn default() -> Self {
        Self {
            tol_grad: 1e-9,
            tol_loss: 1e-8,
            rk_tol: 1e-10,
            dt_max: 10.0,
            max_time: 1e6,
            max_steps: 1_000_000,
            newton: true,
            gap: GapThreshold::default(),
            keep_log: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PhiResult {
    pub point: ParamVector,
    pub flow_time: f64,
    pub steps: usize,
    pub grad_norm: f64,
    /// (t, ‖∇L(φ(x₀, t))‖) per step when requested.
    pub log: Vec<(f64, f64)>,
}

/// Φ(x₀) = lim_{t→∞} φ(x₀, t) for the gradient flow ẋ = −∇L(x).
pub fn limit_map_phi(loss: &dyn Loss, x0: &ParamVector, opts: &PhiOptions) -> Result<PhiResult> {
    check_finite(x0, "limit map start")?;
    let rhs = |y: &ParamVector| -loss.gradient(y);
    let mut y = x0.clone();
    let mut t = 0.0;
    let mut g = loss.gradient(&y).norm();
    let mut val = loss.value(&y);
    let mut steps = 0;
    let mut log = Vec::new();
    // Start from a step matched to the local curvature scale.
    let h0 = (0.1 / (g + 1e-12)).min(opts.dt_max).max(1e-6);
    let mut stepper = Rk4Stepper::new(opts.rk_tol, h0, opts.dt_max);
    if opts.keep_log {
        log.push((t, g));
    }
    while g >= opts.tol_grad {
        if steps >= opts.max_steps || t >= opts.max_time {
            return Err(Error::NonAttracted(format!(
                "|∇L| = {g:e} after {steps} steps, t = {t:e}"
            )));
        }
        let (tn, yn) = stepper
            .advance(&rhs, t, &y, opts.max_time)
            .map_err(|e| Error::NonAttracted(format!("integrator failed: {e}")))?;
        let vn = loss.value(&yn);
        if !vn.is_finite() || vn > val + 1e-12 * (1.0 + val) + 1e-14 {
            return Err(Error::NonAttracted(format!(
                "loss increased from {val:e} to {vn:e} at t = {tn:e}"
            )));
        }
        t = tn;
        y = yn;
        val = vn;
        g = loss.gradient(&y).norm();
        steps += 1;
        if opts.keep_log {
            log.push((t, g));
        }
    }
    if opts.newton && g > 0.0 {
        let split = spectral_split(&loss.hessian(&y), opts.gap)?;
        let corr = pseudo_inverse(&split) * loss.gradient(&y);
        y -= corr;
        g = loss.gradient(&y).norm();
    }
    let v = loss.value(&y);
    if !(v <= opts.tol_loss) {
        return Err(Error::NonAttracted(format!(
            "flow stopped at a critical point with L = {v:e} > {:e}",
            opts.tol_loss
        )));
    }
    Ok(PhiResult {
        point: y,
        flow_time: t,
        steps,
        grad_norm: g,
        log,
    })
}
