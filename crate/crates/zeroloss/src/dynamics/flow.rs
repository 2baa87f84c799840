//! Deterministic gradient flow ẋ = −∇L(x).

use super::ode::Rk4Stepper;
use super::{diagnose, ExitInfo, Trajectory};
use crate::losses::Loss;
use crate::{check_finite, ParamVector, Result};

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub rk_tol: f64,
    pub dt_max: f64,
    /// Stop once ‖∇L‖ drops below this; later output times repeat the
    /// last state. Zero disables the check.
    pub converge_tol: f64,
    pub distance_diagnostics: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            rk_tol: 1e-11,
            dt_max: 1.0,
            converge_tol: 0.0,
            distance_diagnostics: false,
        }
    }
}

/// Adaptive RK4 solution up to `t_end`, recording every accepted step.
pub fn gradient_flow(loss: &dyn Loss, x0: &ParamVector, t_end: f64) -> Result<Trajectory> {
    flow_impl(loss, x0, None, t_end, &FlowOptions::default())
}

/// Solution sampled exactly at the given non-decreasing output times.
pub fn gradient_flow_at(loss: &dyn Loss, x0: &ParamVector, times: &[f64], opts: &FlowOptions) -> Result<Trajectory> {
    let t_end = times.last().copied().unwrap_or(0.0);
    flow_impl(loss, x0, Some(times), t_end, opts)
}

fn flow_impl(
    loss: &dyn Loss,
    x0: &ParamVector,
    outputs: Option<&[f64]>,
    t_end: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    check_finite(x0, "gradient flow start")?;
    let rhs = |y: &ParamVector| -loss.gradient(y);
    let diag = |y: &ParamVector| diagnose(loss, y, opts.distance_diagnostics);
    let mut traj = Trajectory::new();
    let mut y = x0.clone();
    let mut t = 0.0;
    let g0 = loss.gradient(&y).norm();
    let mut stepper = Rk4Stepper::new(opts.rk_tol, (0.1 / (g0 + 1e-12)).clamp(1e-6, opts.dt_max), opts.dt_max);
    let mut converged = false;
    let emit = |traj: &mut Trajectory, t: f64, y: &ParamVector| {
        if traj.times.last().is_some_and(|&s| s >= t) {
            // Repeated output times keep the first sample.
            return;
        }
        traj.push(t, y.clone(), diag(y));
    };
    match outputs {
        None => {
            emit(&mut traj, 0.0, &y);
            while t < t_end {
                if opts.converge_tol > 0.0 && loss.gradient(&y).norm() < opts.converge_tol {
                    traj.exit = ExitInfo::Converged { t };
                    break;
                }
                let (tn, yn) = stepper.advance(&rhs, t, &y, t_end)?;
                t = tn;
                y = yn;
                emit(&mut traj, t, &y);
            }
        }
        Some(out) => {
            for &target in out {
                while t < target && !converged {
                    if opts.converge_tol > 0.0 && loss.gradient(&y).norm() < opts.converge_tol {
                        converged = true;
                        traj.exit = ExitInfo::Converged { t };
                        break;
                    }
                    let (tn, yn) = stepper.advance(&rhs, t, &y, target)?;
                    t = tn;
                    y = yn;
                }
                emit(&mut traj, target, &y);
            }
        }
    }
    check_finite(&y, "gradient flow")?;
    Ok(traj)
}
