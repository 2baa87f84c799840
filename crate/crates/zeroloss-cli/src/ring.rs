//! Brute-force oracles for the ring-sine loss.

use std::f64::consts::PI;

use zeroloss::ParamVector;

/// Anti-PGD regularizer on the unit circle, 1 + a·sin(b·cos θ).
pub fn reg_theta(theta: f64, a: f64, b: f64) -> f64 {
    1.0 + a * (b * theta.cos()).sin()
}

pub fn on_circle(theta: f64) -> ParamVector {
    ParamVector::from_vec(vec![theta.cos(), theta.sin()])
}

pub fn angle(w: &ParamVector) -> f64 {
    w[1].atan2(w[0])
}

/// |a − b| modulo 2π, in [0, π].
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

pub const SCAN_POINTS: usize = 100_000;

fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// All local minimizers of a 2π-periodic function from a uniform scan of
/// [0, 2π) refined by golden-section search.
pub fn scan_minimizers<F: Fn(f64) -> f64>(f: F) -> Vec<f64> {
    let h = 2.0 * PI / SCAN_POINTS as f64;
    let vals: Vec<f64> = (0..SCAN_POINTS).map(|i| f(i as f64 * h)).collect();
    let n = SCAN_POINTS;
    (0..n)
        .filter(|&i| vals[i] < vals[(i + n - 1) % n] && vals[i] <= vals[(i + 1) % n])
        .map(|i| {
            let c = i as f64 * h;
            golden_section(&f, c - h, c + h, 1e-12).rem_euclid(2.0 * PI)
        })
        .collect()
}

/// The minimizer reached by descending f from θ₀ on the scan grid, refined.
pub fn descend_from<F: Fn(f64) -> f64>(f: F, theta0: f64) -> f64 {
    let n = SCAN_POINTS as i64;
    let h = 2.0 * PI / n as f64;
    let mut i = (theta0.rem_euclid(2.0 * PI) / h).round() as i64;
    let at = |k: i64| f(k.rem_euclid(n) as f64 * h);
    loop {
        let (l, c, r) = (at(i - 1), at(i), at(i + 1));
        if l < c && l <= r {
            i -= 1;
        } else if r < c {
            i += 1;
        } else {
            break;
        }
    }
    let c = i as f64 * h;
    golden_section(&f, c - h, c + h, 1e-12).rem_euclid(2.0 * PI)
}
