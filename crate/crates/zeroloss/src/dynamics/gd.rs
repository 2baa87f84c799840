//! Discrete noisy gradient descent and its rescaled views.

use super::flow::{gradient_flow_at, FlowOptions};
use super::{diagnose, ExitInfo, PointDiagnostics, ScalePlan, Trajectory};
use crate::geometry::{limit_map_phi, PhiOptions};
use crate::losses::Loss;
use crate::noise::{NoiseFamily, RngState};
use crate::schemes::NoisyLoss;
use crate::{check_dim, Error, ParamVector, Result};

#[derive(Clone, Debug)]
pub enum RecordPlan {
    /// Every max(1, n/10⁴)-th iterate.
    Auto,
    Stride(usize),
    /// Sorted iteration indices.
    Indices(Vec<usize>),
}

impl RecordPlan {
    /// Indices ⌊t/rate⌋ for each slow time in `grid`.
    pub fn for_slow_times(plan: &ScalePlan, grid: &[f64]) -> Self {
        let mut idx: Vec<usize> = grid.iter().map(|&t| plan.step_at(t)).collect();
        idx.sort_unstable();
        idx.dedup();
        RecordPlan::Indices(idx)
    }
}

/// The region K whose exit stops a run.
#[derive(Clone, Debug, PartialEq)]
pub enum StopRegion {
    Unbounded,
    Annulus { r_min: f64, r_max: f64 },
    LossSublevel(f64),
}

impl StopRegion {
    fn contains(&self, loss: &dyn Loss, w: &ParamVector) -> bool {
        match *self {
            StopRegion::Unbounded => true,
            StopRegion::Annulus { r_min, r_max } => {
                let r = w.norm();
                r >= r_min && r <= r_max
            }
            StopRegion::LossSublevel(c) => loss.value(w) <= c,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GdOptions {
    pub record: RecordPlan,
    pub blowup_radius: f64,
    pub stop: StopRegion,
    pub distance_diagnostics: bool,
}

impl Default for GdOptions {
    fn default() -> Self {
        Self {
            record: RecordPlan::Auto,
            blowup_radius: 1e6,
            stop: StopRegion::Unbounded,
            distance_diagnostics: true,
        }
    }
}

/// w_{k+1} = w_k − α ∇_w L̂(w_k, η_k) with fresh η_k each step.
///
/// Times in the returned trajectory are iteration counts.
pub fn noisy_gd(
    lhat: &dyn NoisyLoss,
    family: &NoiseFamily,
    w0: &ParamVector,
    alpha: f64,
    n_steps: usize,
    rng: &mut RngState,
    opts: &GdOptions,
) -> Result<Trajectory> {
    if !(alpha >= 0.0) {
        return Err(Error::Config("step size must be non-negative".into()));
    }
    if family.dim != lhat.noise_dim() {
        return Err(Error::Dimension {
            expected: lhat.noise_dim(),
            got: family.dim,
        });
    }
    check_dim(w0, lhat.dim())?;
    crate::check_finite(w0, "initial point")?;
    let loss = lhat.base();
    let stride = match &opts.record {
        RecordPlan::Auto => (n_steps / 10_000).max(1),
        RecordPlan::Stride(s) => (*s).max(1),
        RecordPlan::Indices(_) => 0,
    };
    let mut next_idx = 0;
    let wanted = |k: usize, next_idx: &mut usize| -> bool {
        match &opts.record {
            RecordPlan::Indices(v) => {
                while *next_idx < v.len() && v[*next_idx] < k {
                    *next_idx += 1;
                }
                *next_idx < v.len() && v[*next_idx] == k
            }
            _ => k.is_multiple_of(stride) || k == n_steps,
        }
    };
    let mut traj = Trajectory::new();
    let record = |traj: &mut Trajectory, k: usize, w: &ParamVector| {
        traj.steps.push(k);
        traj.push(
            k as f64,
            w.clone(),
            diagnose(loss.as_ref(), w, opts.distance_diagnostics),
        );
    };
    let mut w = w0.clone();
    let mut eta = ParamVector::zeros(family.dim);
    if wanted(0, &mut next_idx) {
        record(&mut traj, 0, &w);
    }
    for k in 1..=n_steps {
        family.sample_into(rng, eta.as_mut_slice());
        let g = lhat.grad_w(&w, &eta);
        w.axpy(-alpha, &g, 1.0);
        let norm = w.norm();
        if !(norm <= opts.blowup_radius) {
            record(&mut traj, k, &w.map(|x| if x.is_finite() { x } else { f64::MAX }));
            return Err(Error::Diverged {
                step: k,
                norm,
                partial: Box::new(traj),
            });
        }
        let inside = opts.stop.contains(loss.as_ref(), &w);
        if wanted(k, &mut next_idx) || !inside {
            record(&mut traj, k, &w);
        }
        if !inside {
            traj.exit = ExitInfo::LeftRegion { step: k, t: k as f64 };
            break;
        }
    }
    Ok(traj)
}

/// W_n(t) = w_{⌊t/rate⌋}, keeping only recorded iterates inside [0, T].
pub fn rescaled_process(traj: &Trajectory, plan: &ScalePlan) -> Result<Trajectory> {
    if traj.steps.len() != traj.len() {
        return Err(Error::Config("rescaling needs a discrete trajectory".into()));
    }
    let last = plan.step_at(plan.horizon);
    let exited = matches!(traj.exit, ExitInfo::LeftRegion { .. });
    if !exited && traj.steps.last().is_none_or(|&k| k < last) {
        return Err(Error::NotAvailable(format!(
            "horizon {} needs iterate {last}, run has {:?}",
            plan.horizon,
            traj.steps.last()
        )));
    }
    let mut out = Trajectory::new();
    for i in 0..traj.len() {
        let k = traj.steps[i];
        if k > last {
            break;
        }
        out.steps.push(k);
        out.push(k as f64 * plan.rate(), traj.points[i].clone(), traj.diagnostics[i]);
    }
    if let ExitInfo::LeftRegion { step, .. } = traj.exit {
        out.exit = ExitInfo::LeftRegion {
            step,
            t: step as f64 * plan.rate(),
        };
    }
    Ok(out)
}

/// Y_n(t) = W_n(t) − φ(W_n(0), A_n(t)) + Φ(W_n(0)) with A_n(t) = α⌊t/rate⌋.
///
/// φ is integrated to the integrator times; once its gradient is below
/// `phi.tol_grad` the flow has reached Φ and later values reuse Φ.
pub fn shifted_process(
    loss: &dyn Loss,
    rescaled: &Trajectory,
    plan: &ScalePlan,
    phi: &PhiOptions,
) -> Result<Trajectory> {
    let w0 = rescaled
        .first()
        .ok_or_else(|| Error::Config("empty trajectory".into()))?;
    let phi0 = limit_map_phi(loss, w0, phi)?.point;
    let a: Vec<f64> = rescaled.steps.iter().map(|&k| plan.alpha * k as f64).collect();
    let opts = FlowOptions {
        converge_tol: phi.tol_grad,
        ..FlowOptions::default()
    };
    let flow = gradient_flow_at(loss, w0, &a, &opts)?;
    let converged_at = match flow.exit {
        ExitInfo::Converged { t } => Some(t),
        _ => None,
    };
    let mut out = Trajectory::new();
    out.steps = rescaled.steps.clone();
    let mut fi = 0;
    for i in 0..rescaled.len() {
        while fi + 1 < flow.len() && flow.times[fi + 1] <= a[i] {
            fi += 1;
        }
        let shift: ParamVector = if i == 0 {
            w0.clone()
        } else if converged_at.is_some_and(|tc| a[i] >= tc) {
            phi0.clone()
        } else {
            flow.points[fi].clone()
        };
        let y = if i == 0 {
            phi0.clone()
        } else {
            &rescaled.points[i] - shift + &phi0
        };
        let d: PointDiagnostics = diagnose(loss, &y, false);
        out.push(rescaled.times[i], y, d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Regime, ScalePlan};
    use crate::losses::{Quadratic, RingSine, SharedLoss};
    use crate::schemes::AntiPgd;
    use std::sync::Arc;

    fn ring() -> SharedLoss {
        Arc::new(RingSine::default())
    }

    #[test]
    fn zero_noise_is_plain_gd() {
        let s = AntiPgd::new(ring());
        let fam = NoiseFamily::gaussian(0.0, 2);
        let w0 = ParamVector::from_vec(vec![0.3, 1.6]);
        let opts = GdOptions {
            record: RecordPlan::Stride(1),
            ..GdOptions::default()
        };
        let tr = noisy_gd(&s, &fam, &w0, 0.05, 200, &mut RngState::new(1, 0), &opts).unwrap();
        let l = ring();
        let mut w = w0.clone();
        for k in 1..=200 {
            let g = l.gradient(&w);
            w.axpy(-0.05, &g, 1.0);
            assert_eq!(tr.points[k], w);
        }
    }

    #[test]
    fn zero_step_is_constant() {
        let s = AntiPgd::new(ring());
        let fam = NoiseFamily::gaussian(0.1, 2);
        let w0 = ParamVector::from_vec(vec![0.3, 1.6]);
        let tr = noisy_gd(&s, &fam, &w0, 0.0, 100, &mut RngState::new(1, 0), &GdOptions::default()).unwrap();
        assert!(tr.points.iter().all(|w| *w == w0));
    }

    #[test]
    fn divergence_reports_partial() {
        let q: SharedLoss = Arc::new(Quadratic::isotropic(2, 1.0));
        let s = AntiPgd::new(q);
        let fam = NoiseFamily::gaussian(0.0, 2);
        let w0 = ParamVector::from_vec(vec![1.0, 1.0]);
        let err = noisy_gd(
            &s,
            &fam,
            &w0,
            3.0,
            1000,
            &mut RngState::new(1, 0),
            &GdOptions::default(),
        )
        .unwrap_err();
        match err {
            Error::Diverged { step, partial, .. } => {
                assert!(step > 5 && step < 100);
                assert!(!partial.is_empty());
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn stop_region_exit() {
        let s = AntiPgd::new(ring());
        let fam = NoiseFamily::gaussian(0.0, 2);
        let w0 = ParamVector::from_vec(vec![0.0, 1.45]);
        let opts = GdOptions {
            stop: StopRegion::Annulus { r_min: 0.5, r_max: 1.4 },
            ..GdOptions::default()
        };
        let tr = noisy_gd(&s, &fam, &w0, 0.1, 100, &mut RngState::new(1, 0), &opts).unwrap();
        assert_eq!(tr.exit, ExitInfo::LeftRegion { step: 1, t: 1.0 });
    }

    #[test]
    fn rescaling_and_shift() {
        let s = AntiPgd::new(ring());
        let plan = ScalePlan::new(0.1, 0.3, Regime::Nondegenerate, 2.0).unwrap();
        let fam = NoiseFamily::gaussian(plan.sigma, 2);
        let w0 = ParamVector::from_vec(vec![0.3, 1.3]);
        let n = plan.n_steps();
        let tr = noisy_gd(
            &s,
            &fam,
            &w0,
            plan.alpha,
            n,
            &mut RngState::new(3, 0),
            &GdOptions::default(),
        )
        .unwrap();
        let w = rescaled_process(&tr, &plan).unwrap();
        assert_eq!(w.points[0], w0);
        assert!((w.at(1.0).unwrap() - &tr.points[plan.step_at(1.0)]).norm() == 0.0);
        let short = ScalePlan { horizon: 5.0, ..plan };
        assert!(rescaled_process(&tr, &short).is_err());

        let y = shifted_process(s.base().as_ref(), &w, &plan, &PhiOptions::default()).unwrap();
        let phi0 = limit_map_phi(s.base().as_ref(), &w0, &PhiOptions::default())
            .unwrap()
            .point;
        assert_eq!(y.points[0], phi0);
        // After the fast transient Y_n and W_n agree up to exponentially small terms.
        let k = y.len() - 1;
        assert!((&y.points[k] - &w.points[k]).norm() < 1e-8);
    }

    #[test]
    fn shift_vanishes_on_gamma() {
        let l = ring();
        let s = AntiPgd::new(l.clone());
        let plan = ScalePlan::new(0.1, 0.1, Regime::Nondegenerate, 1.0).unwrap();
        let fam = NoiseFamily::gaussian(plan.sigma, 2);
        let w0 = ParamVector::from_vec(vec![0.6, 0.8]);
        let tr = noisy_gd(
            &s,
            &fam,
            &w0,
            plan.alpha,
            plan.n_steps(),
            &mut RngState::new(4, 0),
            &GdOptions::default(),
        )
        .unwrap();
        let w = rescaled_process(&tr, &plan).unwrap();
        let y = shifted_process(l.as_ref(), &w, &plan, &PhiOptions::default()).unwrap();
        for (a, b) in y.points.iter().zip(&w.points) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn indices_record_plan() {
        let s = AntiPgd::new(ring());
        let fam = NoiseFamily::gaussian(0.01, 2);
        let w0 = ParamVector::from_vec(vec![0.6, 0.8]);
        let opts = GdOptions {
            record: RecordPlan::Indices(vec![0, 7, 7, 50]),
            ..GdOptions::default()
        };
        let tr = noisy_gd(&s, &fam, &w0, 0.1, 60, &mut RngState::new(4, 0), &opts).unwrap();
        assert_eq!(tr.steps, vec![0, 7, 50]);
    }
}
