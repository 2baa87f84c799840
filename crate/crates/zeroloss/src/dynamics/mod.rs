//! Time evolution: noisy GD, gradient flow, rescaled processes and limits.

pub mod constrained;
pub mod flow;
pub mod gd;
pub mod ode;

pub use constrained::{
    constrained_gradient_flow, constrained_sde, BlockSumBrownian, BrownianSource, ConstrainedOptions, GaussianBrownian,
    StepMethod,
};
pub use flow::{gradient_flow, gradient_flow_at, FlowOptions};
pub use gd::{noisy_gd, rescaled_process, shifted_process, GdOptions, RecordPlan, StopRegion};

use crate::geometry::{spectral_split, GapThreshold};
use crate::losses::Loss;
use crate::{Error, ParamVector, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointDiagnostics {
    pub loss: f64,
    pub grad_norm: f64,
    pub dist_gamma: f64,
    pub arclength: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExitInfo {
    Completed,
    /// The gradient fell below the convergence tolerance at this time.
    Converged {
        t: f64,
    },
    /// Iterates left the stopping region K.
    LeftRegion {
        step: usize,
        t: f64,
    },
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<ParamVector>,
    pub diagnostics: Vec<PointDiagnostics>,
    /// Iteration index of each point for discrete processes, empty otherwise.
    pub steps: Vec<usize>,
    pub exit: ExitInfo,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::new()
    }
}

impl Trajectory {
    pub fn new() -> Self {
        Self {
            times: Vec::new(),
            points: Vec::new(),
            diagnostics: Vec::new(),
            steps: Vec::new(),
            exit: ExitInfo::Completed,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, t: f64, w: ParamVector, diag: PointDiagnostics) {
        self.times.push(t);
        self.points.push(w);
        self.diagnostics.push(diag);
    }

    pub fn last(&self) -> Option<&ParamVector> {
        self.points.last()
    }

    pub fn first(&self) -> Option<&ParamVector> {
        self.points.first()
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Right-continuous piecewise-constant value at time t.
    pub fn at(&self, t: f64) -> Option<&ParamVector> {
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            None
        } else {
            Some(&self.points[i - 1])
        }
    }

    /// Linear interpolation between recorded points; clamps outside.
    pub fn interpolate(&self, t: f64) -> Option<ParamVector> {
        let n = self.len();
        if n == 0 {
            return None;
        }
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return Some(self.points[0].clone());
        }
        if i == n {
            return Some(self.points[n - 1].clone());
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let s = (t - t0) / (t1 - t0);
        Some(&self.points[i - 1] * (1.0 - s) + &self.points[i] * s)
    }

    /// Times strictly increasing and all points finite.
    pub fn validate(&self) -> Result<()> {
        if self.times.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::Numeric("trajectory times not increasing".into()));
        }
        for w in &self.points {
            crate::check_finite(w, "trajectory")?;
        }
        Ok(())
    }

    /// Fills the arclength coordinate with the cumulative polygonal length.
    pub fn with_arclength(mut self) -> Self {
        let mut s = 0.0;
        for i in 0..self.points.len() {
            if i > 0 {
                s += (&self.points[i] - &self.points[i - 1]).norm();
            }
            self.diagnostics[i].arclength = Some(s);
        }
        self
    }

    /// Angles of the first two coordinates, unwrapped to be continuous.
    pub fn unwrapped_angles(&self) -> Vec<f64> {
        unwrap_angles(self.points.iter().map(|w| w[1].atan2(w[0])))
    }

    /// Sup over t of the distance between piecewise-constant paths, sampled
    /// at the union of both time grids restricted to [0, t_end].
    pub fn sup_distance(&self, other: &Trajectory, t_end: f64) -> f64 {
        let mut grid: Vec<f64> = self
            .times
            .iter()
            .chain(other.times.iter())
            .copied()
            .filter(|&t| t <= t_end)
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.iter()
            .filter_map(|&t| Some((self.at(t)? - other.at(t)?).norm()))
            .fold(0.0, f64::max)
    }
}

pub fn unwrap_angles(raw: impl IntoIterator<Item = f64>) -> Vec<f64> {
    use std::f64::consts::PI;
    let mut out: Vec<f64> = Vec::new();
    for a in raw {
        match out.last() {
            None => out.push(a),
            Some(&prev) => {
                let mut d = a - prev;
                d -= 2.0 * PI * (d / (2.0 * PI)).round();
                out.push(prev + d);
            }
        }
    }
    out
}

/// Distance to Γ: exact when the loss knows it, otherwise the Newton
/// decrement surrogate ‖∇L‖ / λ_min⁺.
pub fn distance_to_gamma(loss: &dyn Loss, w: &ParamVector) -> f64 {
    if let Some(d) = loss.zero_set_distance(w) {
        return d;
    }
    let g = loss.gradient(w).norm();
    if g == 0.0 {
        return 0.0;
    }
    match spectral_split(&loss.hessian(w), GapThreshold::default()) {
        Ok(s) if s.rank > 0 => g / s.eigenvalues[s.rank - 1],
        _ => g,
    }
}

pub fn diagnose(loss: &dyn Loss, w: &ParamVector, with_distance: bool) -> PointDiagnostics {
    PointDiagnostics {
        loss: loss.value(w),
        grad_norm: loss.gradient(w).norm(),
        dist_gamma: if with_distance {
            distance_to_gamma(loss, w)
        } else {
            f64::NAN
        },
        arclength: None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Slow clock t = α σ² k.
    Nondegenerate,
    /// Slow clock t = α² σ² k.
    Degenerate,
}

#[derive(Clone, Copy, Debug)]
pub struct ScalePlan {
    pub alpha: f64,
    pub sigma: f64,
    pub regime: Regime,
    pub horizon: f64,
}

pub const DEFAULT_STEP_CAP: usize = 100_000_000;

impl ScalePlan {
    pub fn new(alpha: f64, sigma: f64, regime: Regime, horizon: f64) -> Result<Self> {
        if !(alpha > 0.0 && sigma > 0.0 && horizon > 0.0) {
            return Err(Error::Config(
                "scale plan needs positive alpha, sigma and horizon".into(),
            ));
        }
        Ok(Self {
            alpha,
            sigma,
            regime,
            horizon,
        })
    }

    /// Slow time elapsed per iteration.
    pub fn rate(&self) -> f64 {
        match self.regime {
            Regime::Nondegenerate => self.alpha * self.sigma * self.sigma,
            Regime::Degenerate => self.alpha * self.alpha * self.sigma * self.sigma,
        }
    }

    /// ⌊t / rate⌋, robust to the last bit of rounding in t / rate.
    pub fn step_at(&self, t: f64) -> usize {
        (t / self.rate() * (1.0 + 1e-12)).floor() as usize
    }

    /// Integrator time α·⌊t / rate⌋ driving the fast flow.
    pub fn integrator(&self, t: f64) -> f64 {
        self.alpha * self.step_at(t) as f64
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.rate() * (1.0 - 1e-12)).ceil() as usize
    }

    pub fn check_budget(&self, cap: usize) -> Result<usize> {
        let n = self.n_steps();
        if n > cap {
            return Err(Error::Budget(format!(
                "{n} iterations needed for horizon {}, cap is {cap}",
                self.horizon
            )));
        }
        Ok(n)
    }
}
