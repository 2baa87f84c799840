//! Adaptive classical Runge–Kutta with step doubling.
//!
//! Each step is taken once with h and twice with h/2; the difference
//! estimates the local error and the Richardson combination is returned.

use crate::{Error, ParamVector, Result};

#[derive(Clone, Debug)]
pub struct Rk4Stepper {
    /// Per-step absolute error target (max norm).
    pub tol: f64,
    /// Current step size.
    pub h: f64,
    pub h_max: f64,
}

impl Rk4Stepper {
    pub fn new(tol: f64, h_init: f64, h_max: f64) -> Self {
        Self {
            tol,
            h: h_init.min(h_max),
            h_max,
        }
    }

    fn rk4<F: Fn(&ParamVector) -> ParamVector>(f: &F, y: &ParamVector, h: f64) -> ParamVector {
        let k1 = f(y);
        let k2 = f(&(y + &k1 * (0.5 * h)));
        let k3 = f(&(y + &k2 * (0.5 * h)));
        let k4 = f(&(y + &k3 * h));
        y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    /// Takes one accepted step of length at most `t_limit − t`.
    /// Returns the new time and state.
    pub fn advance<F: Fn(&ParamVector) -> ParamVector>(
        &mut self,
        f: &F,
        t: f64,
        y: &ParamVector,
        t_limit: f64,
    ) -> Result<(f64, ParamVector)> {
        loop {
            let remaining = t_limit - t;
            let h = self.h.min(remaining);
            let hits_limit = h >= remaining;
            if h <= 1e-14 * t.abs().max(1.0) {
                return Err(Error::Stiffness { t });
            }
            let full = Self::rk4(f, y, h);
            let half = Self::rk4(f, &Self::rk4(f, y, 0.5 * h), 0.5 * h);
            let diff = &half - &full;
            let err = diff.amax() / 15.0;
            if !err.is_finite() {
                self.h = 0.25 * h;
                continue;
            }
            let factor = if err == 0.0 {
                4.0
            } else {
                (0.9 * (self.tol / err).powf(0.2)).clamp(0.2, 4.0)
            };
            if err <= self.tol {
                let proposed = (h * factor).min(self.h_max);
                // A step clipped by t_limit says nothing about the natural step size.
                if !(hits_limit && proposed < self.h) {
                    self.h = proposed;
                }
                let t_new = if hits_limit { t_limit } else { t + h };
                return Ok((t_new, half + diff / 15.0));
            }
            self.h = h * factor;
        }
    }
}
