//! The acceptance suite: one function per criterion, each returning a
//! measured verdict.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use statrs::distribution::{ContinuousCDF, StudentsT};
use zeroloss::dynamics::{
    constrained_gradient_flow, constrained_sde, noisy_gd, rescaled_process, shifted_process, unwrap_angles,
    BlockSumBrownian, ConstrainedOptions, GdOptions, RecordPlan, Regime, ScalePlan, StepMethod, Trajectory,
};
use zeroloss::geometry::{
    limit_map_phi, phi_second_derivative_identity, spectral_split, tangent_projector, GapThreshold, ManifoldPoint,
    PhiOptions,
};
use zeroloss::losses::{Dataset, DeepNet, Loss, MseLoss, OlmPredictor, Predictor, RingSine, ShallowNet, SharedLoss};
use zeroloss::noise::{noise_decay_check, NoiseFamily, RngState};
use zeroloss::numdiff;
use zeroloss::regularizers::{
    drift_expectation, reg_label_noise, timescale_classify, NumericReg, Regularizer, Timescale,
};
use zeroloss::schemes::{
    AntiPgd, CombinedConstant, DropConnect, DropoutOlm, DropoutShallow, LabelNoise, LabelPlusMinibatch, Minibatch,
    ModulatedQuadratic, NoisyLoss, NormLinear, Sgld,
};
use zeroloss::{Matrix, ParamVector};

use crate::ring::{angle, angular_distance, descend_from, on_circle, reg_theta};

#[derive(Clone, Copy, Debug, Default)]
pub struct AcceptOptions {
    /// Reduced sample counts; verdicts are marked as smoke runs.
    pub quick: bool,
    pub seed_base: u64,
}

impl AcceptOptions {
    fn seeds(&self, full: usize, quick: usize) -> Vec<u64> {
        let n = if self.quick { quick } else { full };
        (0..n as u64).map(|s| self.seed_base + s).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub smoke: bool,
    pub measured: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] C{:<2} {}{}: {} ({:.1}s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            if self.smoke { " [smoke]" } else { "" },
            self.measured,
            self.seconds
        )
    }
}

pub type Criterion = fn(&AcceptOptions) -> CriterionResult;

pub const CRITERIA: [(u32, Criterion); 11] = [
    (1, c1_ring_endpoint),
    (2, c2_convergence),
    (3, c3_drift_probe),
    (4, c4_phi_oracles),
    (5, c5_time_scales),
    (6, c6_minibatch),
    (7, c7_label_noise),
    (8, c8_combined_constant),
    (9, c9_sgld),
    (10, c10_noise_decay),
    (11, c11_invariants),
];

pub fn run(ids: &[u32], opts: &AcceptOptions) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .filter(|(id, _)| ids.is_empty() || ids.contains(id))
        .map(|(_, f)| f(opts))
        .collect()
}

fn finish(
    id: u32,
    name: &'static str,
    opts: &AcceptOptions,
    start: Instant,
    pass: bool,
    measured: String,
) -> CriterionResult {
    CriterionResult {
        id,
        name,
        pass,
        smoke: opts.quick,
        measured,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean_ci95(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, t_quantile_975(v.len() - 1) * (var / n).sqrt())
}

/// Two-sided 95% Student-t quantile.
fn t_quantile_975(dof: usize) -> f64 {
    if dof == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof as f64).map_or(f64::NAN, |t| t.inverse_cdf(0.975))
}

fn ring() -> SharedLoss {
    Arc::new(RingSine::default())
}

fn phi(loss: &dyn Loss, x: &ParamVector) -> Option<ParamVector> {
    limit_map_phi(loss, x, &PhiOptions::default()).ok().map(|r| r.point)
}

pub const RING_START: [f64; 2] = [0.3, 1.6];

/// The Reg minimizer the constrained flow from Φ(w₀) runs into.
pub fn ring_target(w0: &ParamVector) -> f64 {
    let start = phi(ring().as_ref(), w0).expect("start is attracted");
    descend_from(|t| reg_theta(t, 0.7, 5.0), angle(&start))
}

pub fn c1_ring_endpoint(opts: &AcceptOptions) -> CriterionResult {
    let start = Instant::now();
    let (alpha, sigma, steps) = (0.3, 0.03, 200_000);
    let w0 = ParamVector::from_row_slice(&RING_START);
    let theta_star = ring_target(&w0);
    let scheme = AntiPgd::new(ring());
    let fam = NoiseFamily::gaussian(sigma, 2);
    let seeds = opts.seeds(20, 5);
    let gd = GdOptions {
        record: RecordPlan::Indices(vec![steps]),
        ..GdOptions::default()
    };
    let res: Vec<(f64, f64)> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = RngState::new(s, 1);
            match noisy_gd(&scheme, &fam, &w0, alpha, steps, &mut rng, &gd) {
                Ok(t) => {
                    let w = t.last().unwrap();
                    ((w.norm() - 1.0).abs(), angular_distance(angle(w), theta_star))
                }
                Err(_) => (f64::INFINITY, f64::INFINITY),
            }
        })
        .collect();
    let good = res.iter().filter(|(d, a)| *d < 0.02 && *a < 0.05).count();
    let pass = good * 10 >= seeds.len() * 9;
    let max_d = res.iter().map(|r| r.0).fold(0.0, f64::max);
    let max_a = res.iter().map(|r| r.1).fold(0.0, f64::max);
    finish(
        1,
        "ring anti-PGD terminal point",
        opts,
        start,
        pass,
        format!(
            "{good}/{} seeds within tolerance (θ* = {theta_star:.4}, max dist {max_d:.2e}, max angle err {max_a:.2e})",
            seeds.len()
        ),
    )
}

/// Sup over the comparison grid of the angular distance between the
/// shifted process and the reference flow, for one seed at one level.
fn c2_seed(alpha: f64, sigma: f64, t_end: f64, seed: u64, reference: &Trajectory, grid: &[f64]) -> f64 {
    let scheme = AntiPgd::new(ring());
    let plan = ScalePlan::new(alpha, sigma, Regime::Nondegenerate, t_end).unwrap();
    let fam = NoiseFamily::gaussian(sigma, 2);
    let w0 = ParamVector::from_row_slice(&RING_START);
    let gd = GdOptions {
        record: RecordPlan::for_slow_times(&plan, grid),
        distance_diagnostics: false,
        ..GdOptions::default()
    };
    let mut rng = RngState::new(seed, 2);
    let Ok(tr) = noisy_gd(&scheme, &fam, &w0, alpha, plan.n_steps(), &mut rng, &gd) else {
        return f64::INFINITY;
    };
    let Ok(w) = rescaled_process(&tr, &plan) else {
        return f64::INFINITY;
    };
    let Ok(y) = shifted_process(scheme.base().as_ref(), &w, &plan, &PhiOptions::default()) else {
        return f64::INFINITY;
    };
    grid.iter()
        .map(|&t| {
            let yt = y.at(t).unwrap();
            let rt = reference.interpolate(t).unwrap();
            angular_distance(angle(yt), angle(&rt))
        })
        .fold(0.0, f64::max)
}

pub fn ring_reference_flow(y0: &ParamVector, t_end: f64) -> Trajectory {
    let l = ring();
    let reg = AntiPgd::new(l.clone()).analytic_reg(None).unwrap();
    let copts = ConstrainedOptions {
        dt: 1e-3,
        method: StepMethod::Heun,
        ..ConstrainedOptions::default()
    };
    constrained_gradient_flow(l.as_ref(), |w| reg.gradient(w), y0, t_end, &copts).expect("reference flow")
}

pub fn c2_convergence(opts: &AcceptOptions) -> CriterionResult {
    let start = Instant::now();
    let t_end = 2.0;
    let levels = [(0.3, 0.03), (0.15, 0.015), (0.075, 0.0075)];
    let grid: Vec<f64> = (0..=200).map(|i| t_end * i as f64 / 200.0).collect();
    let w0 = ParamVector::from_row_slice(&RING_START);
    let reference = ring_reference_flow(&phi(ring().as_ref(), &w0).unwrap(), t_end);
    let seeds = opts.seeds(20, 4);
    let medians: Vec<f64> = levels
        .iter()
        .map(|&(a, s)| {
            let sups: Vec<f64> = seeds
                .par_iter()
                .map(|&seed| c2_seed(a, s, t_end, seed, &reference, &grid))
                .collect();
            median(&sups)
        })
        .collect();
    let decreasing = medians.windows(2).all(|p| p[1] < p[0]);
    let last = *medians.last().unwrap();
    finish(
        2,
        "shifted process converges to constrained flow",
        opts,
        start,
        decreasing && last < 0.05,
        format!(
            "median sup angular distance per level {:?}, final {last:.4} (< 0.05)",
            medians.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>()
        ),
    )
}

/// Relative error between the tangential part of −ΔF/(ασ²) and P∇Reg.
fn drift_error(
    scheme: &dyn NoisyLoss,
    family: &NoiseFamily,
    reg: &dyn Regularizer,
    w: &ParamVector,
    samples: usize,
    seed: u64,
) -> f64 {
    let alpha = 0.1;
    let sigma2 = family.covariance().trace() / family.dim as f64;
    let p = tangent_projector(scheme.base().as_ref(), w, GapThreshold::default(), 1e-6)
        .expect("probe point on Γ")
        .p;
    let est = drift_expectation(scheme, family, w, alpha, samples, &RngState::new(seed, 3)).unwrap();
    let measured = &p * (-est.mean / (alpha * sigma2));
    let target = &p * reg.gradient(w);
    (measured - &target).norm() / target.norm()
}

fn random_inputs(rng: &mut RngState, n: usize, d: usize) -> Vec<ParamVector> {
    (0..n)
        .map(|_| ParamVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)))
        .collect()
}

fn teacher_data(pred: &dyn Predictor, w: &ParamVector, n: usize, seed: u64) -> Arc<Dataset> {
    let mut rng = RngState::new(seed, 99);
    let xs = random_inputs(&mut rng, n, pred.dim_in());
    Arc::new(Dataset::teacher(pred, w, xs).unwrap())
}

pub fn c3_drift_probe(opts: &AcceptOptions) -> CriterionResult {
    let start = Instant::now();
    let samples = if opts.quick { 100_000 } else { 1_000_000 };
    let l = ring();
    let w_ring = ParamVector::from_vec(vec![0.0, 1.0]);
    let w_dc = on_circle(1.2);

    let olm_w = ParamVector::from_vec(vec![0.9, 0.6, 1.1, 0.7, 0.5, 0.8, 0.3, 0.4]);
    let olm = DropoutOlm::new(4, teacher_data(&OlmPredictor::new(4), &olm_w, 2, 31)).unwrap();
    let net = ShallowNet::new(3, 2);
    let sh_w = ParamVector::from_vec(vec![0.8, -0.6, 1.1, 0.7, -0.4, 0.9, 0.5, -0.8, 0.6]);
    let shallow = DropoutShallow::new(3, 2, teacher_data(&net, &sh_w, 3, 32)).unwrap();

    let mut parts = Vec::new();
    let mut pass = true;
    for sigma in [0.01, 0.005] {
        let gauss2 = NoiseFamily::gaussian(sigma, 2);
        let cases: Vec<(&str, Arc<dyn NoisyLoss>, NoiseFamily, ParamVector)> = vec![
            (
                "anti-pgd",
                Arc::new(AntiPgd::new(l.clone())),
                gauss2.clone(),
                w_ring.clone(),
            ),
            (
                "gauss-dropconnect",
                Arc::new(DropConnect::new(l.clone())),
                gauss2.clone(),
                w_dc.clone(),
            ),
            (
                "bern-dropconnect",
                Arc::new(DropConnect::new(l.clone())),
                NoiseFamily::bernoulli_with_sigma(sigma, 2).unwrap(),
                w_dc.clone(),
            ),
            (
                "dropout-olm",
                Arc::new(olm.clone()),
                NoiseFamily::gaussian(sigma, 4),
                olm_w.clone(),
            ),
            (
                "dropout-shallow",
                Arc::new(shallow_clone(&shallow)),
                NoiseFamily::gaussian(sigma, 3),
                sh_w.clone(),
            ),
        ];
        for (k, (name, s, fam, w)) in cases.into_iter().enumerate() {
            let reg = s.analytic_reg(Some(&fam)).expect("closed form");
            let err = drift_error(s.as_ref(), &fam, reg.as_ref(), &w, samples, opts.seed_base + k as u64);
            pass &= err < 0.05;
            parts.push(format!("{name}@{sigma}: {:.2}%", 100.0 * err));
        }
    }
    finish(3, "drift probe matches P∇Reg", opts, start, pass, parts.join(", "))
}

fn shallow_clone(s: &DropoutShallow) -> DropoutShallow {
    DropoutShallow {
        net: s.net,
        data: s.data.clone(),
        loss: s.loss.clone(),
    }
}

pub fn c4_phi_oracles(opts: &AcceptOptions) -> CriterionResult {
    let start = Instant::now();
    let l = RingSine::default();
    let tight = PhiOptions {
        rk_tol: 1e-13,
        tol_grad: 1e-12,
        ..PhiOptions::default()
    };
    let phi = |x: &ParamVector| limit_map_phi(&l, x, &tight).unwrap().point;
    let thetas: Vec<f64> = (0..8).map(|k| 0.3 + k as f64 * 2.0 * PI / 8.0).collect();
    let (mut ea, mut eb, mut ec) = (0.0f64, 0.0f64, 0.0f64);
    for &t in &thetas {
        let w = on_circle(t);
        let mp = ManifoldPoint::at(&l, &w).unwrap();
        let jac = numdiff::jacobian(phi, &w, 1e-5);
        ea = ea.max((jac - &mp.proj.p).amax());

        let formula = phi_second_derivative_identity(&l, &w, GapThreshold::default(), 1e-5).unwrap();
        let base = phi(&w);
        let lap_at = |h: f64| {
            let mut acc = ParamVector::zeros(2);
            for i in 0..2 {
                let mut e = ParamVector::zeros(2);
                e[i] = h;
                acc += (phi(&(&w + &e)) + phi(&(&w - &e)) - &base * 2.0) / (h * h);
            }
            acc
        };
        let oracle = (lap_at(5e-3) * 4.0 - lap_at(1e-2)) / 3.0;
        eb = eb.max((formula - oracle).norm());

        let general = mp.phi_second(&mp.hessian);
        ec = ec.max((general - mp.phi_second_hessian()).norm());
    }
    let pass = ea < 1e-4 && eb < 1e-3 && ec < 1e-6;
    finish(
        4,
        "limit-map derivative oracles",
        opts,
        start,
        pass,
        format!("(a) max |∂Φ − P| = {ea:.1e}, (b) ∂²Φ[I] err = {eb:.1e}, (c) ∂²Φ[∇²L] err = {ec:.1e}"),
    )
}

/// Iterations until the angle has moved by `arc` from its start, or None.
fn iterations_to_travel(
    scheme: &dyn NoisyLoss,
    fam: &NoiseFamily,
    w0: &ParamVector,
    alpha: f64,
    arc: f64,
    cap: usize,
    seed: u64,
) -> Option<usize> {
    let mut rng = RngState::new(seed, 5);
    let mut w = w0.clone();
    let mut eta = ParamVector::zeros(fam.dim);
    let theta0 = angle(w0);
    let mut prev = theta0;
    let mut unwrapped = theta0;
    for k in 1..=cap {
        fam.sample_into(&mut rng, eta.as_mut_slice());
        let g = scheme.grad_w(&w, &eta);
        w.axpy(-alpha, &g, 1.0);
        if !w.iter().all(|x| x.is_finite()) {
            return None;
        }
        let a = angle(&w);
        unwrapped += unwrap_angles([prev, a])[1] - prev;
        prev = a;
        if (unwrapped - theta0).abs() >= arc {
            return Some(k);
        }
    }
    None
}

pub fn c5_time_scales(opts: &AcceptOptions) -> CriterionResult {
    let start = Instant::now();
    let (alpha, sigma, arc) = (0.1, 0.1, 0.3);
    let w0 = on_circle(PI / 3.0);
    let nondeg = ModulatedQuadratic::new(ring(), 0.7, 2.0);
    let deg = NormLinear::new(ring());
    let fam = NoiseFamily::gaussian(sigma, 1);
    let seeds = opts.seeds(20, 5);
    let cap = 2_000_000;
    let run = |s: &dyn NoisyLoss| -> Vec<f64> {
        seeds
            .par_iter()
            .map(|&seed| iterations_to_travel(s, &fam, &w0, alpha, arc, cap, seed).map_or(f64::INFINITY, |k| k as f64))
            .collect()
    };
    let kn = median(&run(&nondeg));
    let kd = median(&run(&deg));
    let ratio = kd / kn;
    finish(
        5,
        "degenerate scheme is slower",
        opts,
        start,
        ratio >= 5.0,
        format!(
            "median iterations to arclength 0.3: non-degenerate {kn:.0}, degenerate {kd:.0}, ratio {ratio:.2} (≥ 5)"
        ),
    )
}

/// Interpolating OLM with random inputs and a teacher at `w_star`.
pub fn olm_problem(n: usize, d_in: usize, w_star: &ParamVector, seed: u64) -> Arc<MseLoss> {
    let p = OlmPredictor::new(d_in);
    let data = teacher_data(&p, w_star, n, seed);
    Arc::new(MseLoss::new(Arc::new(p), data).unwrap())
}

pub fn c6_minibatch(opts: &AcceptOptions) -> CriterionResult {
    let start = Instant::now();
    let (n, d, m, alpha) = (8, 6, 4, 0.05);
    let mut rng = RngState::new(60, 0);
    let w_star = ParamVector::from_fn(2 * d, |_, _| rng.gen_range(0.4..1.2));
    let loss = olm_problem(n, d, &w_star, 61);
    let mb = Minibatch::new(loss.clone(), m).unwrap();
    let mb_fam = mb.native_noise(1.0).unwrap();
    let sigma = mb_fam.sigma();
    let ln = LabelNoise::new(loss.clone());
    let ln_fam = NoiseFamily::gaussian(sigma, n);
    let steps = (1.0 / (alpha * alpha * sigma * sigma)).round() as usize;
    let offset = ParamVector::from_fn(2 * d, |_, _| rng.gen_range(-0.05..0.05));
    let w0 = &w_star + offset;
    let phi0 = phi(loss.as_ref(), &w0).unwrap();
    let seeds = opts.seeds(20, 5);
    let gd = GdOptions {
        record: RecordPlan::Indices(vec![steps]),
        distance_diagnostics: false,
        ..GdOptions::default()
    };
    let disp = |s: &dyn NoisyLoss, fam: &NoiseFamily| -> Vec<f64> {
        seeds
            .par_iter()
            .map(|&seed| {
                let mut r = RngState::new(seed, 6);
                noisy_gd(s, fam, &w0, alpha, steps, &mut r, &gd)
                    .ok()
                    .and_then(|t| phi(loss.as_ref(), t.last().unwrap()))
                    .map_or(f64::INFINITY, |p| (p - &phi0).norm())
            })
            .collect()
    };
    let d_mb = median(&disp(&mb, &mb_fam));
    let d_ln = median(&disp(&ln, &ln_fam));
    let verdict = timescale_classify(Arc::new(mb.clone()), std::slice::from_ref(&w_star), 1e-6)
        .map(|c| c.verdict)
        .unwrap_or(Timescale::Inconclusive);
    let pass = d_mb < 0.1 * d_ln && verdict == Timescale::TrivialOnBoth;
    finish(
        6,
        "minibatch noise is trivial",
        opts,
        start,
        pass,
        format!(
            "{steps} iterations: median tangential displacement minibatch {d_mb:.2e} vs label noise {d_ln:.2e} (ratio {:.3}); verdict {verdict:?}",
            d_mb / d_ln
        ),
    )
}

/// OLM setup shared by the label-noise criteria: a point on Γ with a large
/// v-component, so the limiting flow has somewhere to go.
pub fn label_problem() -> (Arc<MseLoss>, ParamVector) {
    let v: [f64; 2] = [0.8, 0.8];
    let beta: [f64; 2] = [0.6, -0.4];
    let u: Vec<f64> = (0..2).map(|j| (beta[j] + v[j] * v[j]).sqrt()).collect();
    let w0 = ParamVector::from_vec(vec![u[0], u[1], v[0], v[1]]);
    (olm_problem(4, 2, &w0, 70), w0)
}

fn label_reference(loss: &Arc<MseLoss>, w0: &ParamVector, t_end: f64) -> Trajectory {
    let reg = reg_label_noise(loss.clone(), loss.n());
    let copts = ConstrainedOptions {
        dt: 1e-3,
        method: StepMethod::Heun,
        ..ConstrainedOptions::default()
    };
    constrained_gradient_flow(loss.as_ref(), |w| reg.gradient(w), w0, t_end, &copts).expect("reference flow")
}

/// Φ of the terminal rescaled iterate of a degenerate-clock run.
fn degenerate_terminal(
    scheme: &dyn NoisyLoss,
    fam: &NoiseFamily,
    w0: &ParamVector,
    alpha: f64,
    sigma: f64,
    t_end: f64,
    seed: u64,
) -> Option<ParamVector> {
    let plan = ScalePlan::new(alpha, sigma, Regime::Degenerate, t_end).ok()?;
    let n = plan.step_at(t_end);
    let gd = GdOptions {
        record: RecordPlan::Indices(vec![n]),
        distance_diagnostics: false,
        ..GdOptions::default()
    };
    let mut r = RngState::new(seed, 7);
    let t = noisy_gd(scheme, fam, w0, alpha, n, &mut r, &gd).ok()?;
    phi(scheme.base().as_ref(), t.last()?)
}

pub const C7_HORIZON: f64 = 1.0;

pub fn c7_label_noise(opts: &AcceptOptions) -> CriterionResult {
    let start = Instant::now();
    let (alpha, sigma) = (0.02, 0.5);
    let (loss, w0) = label_problem();
    let reference = label_reference(&loss, &w0, C7_HORIZON);
    let y_end = reference.last().unwrap().clone();
    let scheme = LabelNoise::new(loss.clone());
    let fam = NoiseFamily::gaussian(sigma, loss.n());
    let seeds = opts.seeds(20, 5);
    let dists: Vec<f64> = seeds
        .par_iter()
        .map(|&s| {
            degenerate_terminal(&scheme, &fam, &w0, alpha, sigma, C7_HORIZON, s)
                .map_or(f64::INFINITY, |p| (p - &y_end).norm())
        })
        .collect();
    let good = dists.iter().filter(|&&d| d < 0.05).count();
    let moved = (&y_end - &w0).norm();
    finish(
        7,
        "label noise follows (1/2N)ΔL flow",
        opts,
        start,
        good * 10 >= seeds.len() * 9,
        format!(
            "{good}/{} seeds with |Φ(W(T)) − Y(T)| < 0.05 (median {:.4}, max {:.4}; flow moved {moved:.3})",
            seeds.len(),
            median(&dists),
            dists.iter().cloned().fold(0.0, f64::max)
        ),
    )
}

/// Time s at which the reference flow passes closest to `p`.
fn matching_time(reference: &Trajectory, p: &ParamVector) -> f64 {
    let d: Vec<f64> = reference.points.iter().map(|y| (y - p).norm()).collect();
    let i = (0..d.len()).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
    if i == 0 || i + 1 == d.len() {
        return reference.times[i];
    }
    // Parabola through the three squared distances around the minimum.
    let (a, b, c) = (d[i - 1].powi(2), d[i].powi(2), d[i + 1].powi(2));
    let h = reference.times[i + 1] - reference.times[i];
    let denom = a - 2.0 * b + c;
    let shift = if denom > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    reference.times[i] + shift.clamp(-1.0, 1.0) * h
}

pub fn c8_combined_constant(opts: &AcceptOptions) -> CriterionResult {
    let start = Instant::now();
    let (alpha, sigma0, t_end) = (0.0025, 1.0, 0.5);
    let (loss, w0) = label_problem();
    let reference = label_reference(&loss, &w0, 4.0 * t_end);
    let scheme = LabelPlusMinibatch::new(loss.clone(), sigma0, CombinedConstant::Linear);
    let fam = scheme.native_noise(sigma0).unwrap();
    let seeds = opts.seeds(20, 5);
    let ratios: Vec<f64> = seeds
        .par_iter()
        .map(|&s| {
            degenerate_terminal(&scheme, &fam, &w0, alpha, sigma0, t_end, s)
                .map_or(f64::NAN, |p| matching_time(&reference, &p) / t_end)
        })
        .collect();
    let (m, half) = mean_ci95(&ratios);
    let lin = CombinedConstant::Linear.factor(sigma0);
    let sqrt = CombinedConstant::Sqrt.factor(sigma0);
    let (matched, other, name) = if (m - lin).abs() <= (m - sqrt).abs() {
        (lin, sqrt, "1+σ₀²")
    } else {
        (sqrt, lin, "√(1+σ₀²)")
    };
    let excludes_other = (other - m).abs() > half;
    let contains_matched = (matched - m).abs() <= half;
    finish(
        8,
        "combined label+minibatch constant",
        opts,
        start,
        excludes_other && m.is_finite(),
        format!(
            "speed ratio {m:.3} ± {half:.3} (95% CI); matches {name} = {matched:.3} (CI contains it: {contains_matched}), excludes {other:.3}: {excludes_other}"
        ),
    )
}

fn slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = ts.iter().zip(ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    sxy / sxx
}

fn column_stats(paths: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let k = paths[0].len();
    let n = paths.len() as f64;
    let mut means = vec![0.0; k];
    let mut vars = vec![0.0; k];
    for j in 0..k {
        let m = paths.iter().map(|p| p[j]).sum::<f64>() / n;
        means[j] = m;
        vars[j] = paths.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
    }
    (means, vars)
}

pub fn c9_sgld(opts: &AcceptOptions) -> CriterionResult {
    let start = Instant::now();
    let (alpha, sigma, t_end, block) = (0.02, 1.0, 1.0, 25usize);
    let theta0 = PI / 2.0;
    let w0 = on_circle(theta0);
    let l = ring();
    let scheme = Sgld::new(l.clone());
    let fam = NoiseFamily::gaussian(sigma, 2);
    let plan = ScalePlan::new(alpha, sigma, Regime::Degenerate, t_end).unwrap();
    let dt = block as f64 * plan.rate();
    let n_grid = (t_end / (10.0 * dt)).round() as usize;
    let grid: Vec<f64> = (1..=n_grid).map(|i| i as f64 * 10.0 * dt).collect();
    let paths = if opts.quick { 40 } else { 200 };
    let seed = opts.seed_base + 9;
    let results: Vec<(Vec<f64>, Vec<f64>)> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let gd = GdOptions {
                record: RecordPlan::Indices(grid.iter().map(|&t| plan.step_at(t)).collect()),
                distance_diagnostics: false,
                ..GdOptions::default()
            };
            let mut r = RngState::new(seed, i);
            let tr = noisy_gd(&scheme, &fam, &w0, alpha, plan.step_at(t_end), &mut r, &gd).unwrap();
            let mut gd_angles = unwrap_angles(std::iter::once(theta0).chain(tr.points.iter().map(angle)));
            gd_angles.remove(0);

            let mut b = BlockSumBrownian {
                family: fam.clone(),
                rng: RngState::new(seed, i),
                block,
                coef: -alpha,
            };
            let copts = ConstrainedOptions {
                dt,
                record_every: 10,
                ..ConstrainedOptions::default()
            };
            let sde = constrained_sde(
                l.as_ref(),
                scheme.degenerate_parts().unwrap(),
                sigma,
                &w0,
                t_end,
                &copts,
                &mut b,
            )
            .unwrap();
            let mut sde_angles = sde.unwrapped_angles();
            sde_angles.remove(0);
            let d: Vec<f64> = gd_angles.iter().map(|a| a - theta0).collect();
            let e: Vec<f64> = sde_angles.iter().map(|a| a - theta0).collect();
            (d, e)
        })
        .collect();
    let gd_paths: Vec<Vec<f64>> = results.iter().map(|r| r.0.clone()).collect();
    let sde_paths: Vec<Vec<f64>> = results.iter().map(|r| r.1.clone()).collect();
    let (gm, gv) = column_stats(&gd_paths);
    let (sm, sv) = column_stats(&sde_paths);
    let (sg, ss) = (slope(&grid, &gv), slope(&grid, &sv));
    // Tangential drift −(1/16) d/dθ log|∇²L|₊ at θ₀ sets the expected sign.
    let lp = |t: f64| {
        spectral_split(&l.hessian(&on_circle(t)), GapThreshold::default())
            .unwrap()
            .log_pseudo_determinant()
    };
    let expected = -(lp(theta0 + 1e-4) - lp(theta0 - 1e-4)).signum();
    let (dg, ds) = (*gm.last().unwrap(), *sm.last().unwrap());
    let slopes_ok = (sg - ss).abs() < 0.2 * ss.abs();
    let signs_ok = dg.signum() == expected && ds.signum() == expected;
    finish(
        9,
        "SGLD matches constrained SDE",
        opts,
        start,
        slopes_ok && signs_ok,
        format!(
            "{paths} paths: variance slope GD {sg:.4} vs SDE {ss:.4} (rel diff {:.1}%); mean drift at T GD {dg:+.4}, SDE {ds:+.4}, expected sign {expected:+}",
            100.0 * (sg - ss).abs() / ss.abs()
        ),
    )
}

pub fn c10_noise_decay(opts: &AcceptOptions) -> CriterionResult {
    let start = Instant::now();
    let fam = NoiseFamily::gaussian(1.0, 2);
    let alphas = [0.1, 0.05, 0.025];
    let meds: Vec<f64> = alphas
        .iter()
        .map(|&a| {
            let sups: Vec<f64> = (0..50u64)
                .map(|s| noise_decay_check(&fam, a, 1.0, 2.0, 1.0, &mut RngState::new(opts.seed_base + s, 10)).unwrap())
                .collect();
            median(&sups)
        })
        .collect();
    let pass = meds.windows(2).all(|p| p[1] < p[0]);
    finish(
        10,
        "noise sup decays with α",
        opts,
        start,
        pass,
        format!("median sup α|η|² over 50 streams for α = 0.1, 0.05, 0.025: {meds:.4?}"),
    )
}

pub fn c11_invariants(opts: &AcceptOptions) -> CriterionResult {
    let start = Instant::now();
    let mut failures: Vec<String> = Vec::new();
    let mut checks = 0usize;
    let mut check = |ok: bool, what: String| {
        checks += 1;
        if !ok {
            failures.push(what);
        }
    };
    let mut rng = RngState::new(opts.seed_base + 11, 11);
    let l = ring();

    // Losses: gradient and Hessian against finite differences.
    let olm = olm_problem(5, 3, &ParamVector::from_vec(vec![0.9, 0.5, 1.0, 0.3, 0.7, 0.2]), 111);
    let net = ShallowNet::new(3, 2);
    let sh_w = ParamVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
    let shallow: SharedLoss = Arc::new(MseLoss::new(Arc::new(net), teacher_data(&net, &sh_w, 4, 112)).unwrap());
    let deep_net = DeepNet::new(vec![2, 3, 2, 1]).unwrap();
    let deep_w = ParamVector::from_fn(deep_net.dim_w(), |_, _| rng.gen_range(-1.0..1.0));
    let deep: SharedLoss =
        Arc::new(MseLoss::new(Arc::new(deep_net.clone()), teacher_data(&deep_net, &deep_w, 4, 113)).unwrap());
    let losses: Vec<SharedLoss> = vec![l.clone(), olm.clone(), shallow, deep];
    for loss in &losses {
        for _ in 0..5 {
            let w = ParamVector::from_fn(loss.dim(), |_, _| rng.gen_range(-1.2..1.2));
            let fd = numdiff::gradient(|x| loss.value(x), &w, 1e-5);
            check(
                numdiff::rel_err(&loss.gradient(&w), &fd, 1e-6) < 1e-5,
                format!("gradient {}", loss.name()),
            );
            let fdh = numdiff::hessian_from_gradient(|x| loss.gradient(x), &w, 1e-5);
            let h = loss.hessian(&w);
            check(
                (&h - &fdh).amax() < 1e-4 * (1.0 + h.amax()),
                format!("hessian {}", loss.name()),
            );
        }
    }

    // Schemes: L̂(w, 0) = L(w) exactly.
    let schemes: Vec<Arc<dyn NoisyLoss>> = vec![
        Arc::new(DropConnect::new(l.clone())),
        Arc::new(AntiPgd::new(l.clone())),
        Arc::new(Sgld::new(l.clone())),
        Arc::new(ModulatedQuadratic::new(l.clone(), 0.7, 2.0)),
        Arc::new(NormLinear::new(l.clone())),
        Arc::new(LabelNoise::new(olm.clone())),
        Arc::new(Minibatch::new(olm.clone(), 2).unwrap()),
        Arc::new(LabelPlusMinibatch::new(olm.clone(), 1.0, CombinedConstant::Linear)),
        Arc::new(DropoutOlm::new(3, olm.data.clone()).unwrap()),
    ];
    for s in &schemes {
        for _ in 0..5 {
            let w = ParamVector::from_fn(s.dim(), |_, _| rng.gen_range(-1.2..1.2));
            let z = ParamVector::zeros(s.noise_dim());
            check(
                s.value(&w, &z) == s.base().value(&w),
                format!("consistency {}", s.tag().id()),
            );
        }
    }

    // Projectors and Φ.
    for k in 0..6 {
        let x = on_circle(0.4 + k as f64) * (1.0 + 0.1 * (k as f64 - 2.5));
        let p1 = phi(l.as_ref(), &x).unwrap();
        let p2 = phi(l.as_ref(), &p1).unwrap();
        check((&p1 - &p2).norm() < 1e-8, "phi idempotent".into());
        let pp = tangent_projector(l.as_ref(), &p1, GapThreshold::default(), 1e-6).unwrap();
        let id = Matrix::identity(2, 2);
        check((&pp.p * &pp.p - &pp.p).amax() < 1e-12, "P² = P".into());
        check((&pp.p + &pp.q - id).amax() < 1e-12, "P + Q = I".into());
        check((&pp.p - pp.p.transpose()).amax() < 1e-12, "P symmetric".into());
        check((l.hessian(&p1) * &pp.p).amax() < 1e-6, "∇²L P = 0".into());
    }

    // Closed-form regularizers against the numeric η-Laplacian.
    let olm_dropout = DropoutOlm::new(3, olm.data.clone()).unwrap();
    let sh_data = teacher_data(&net, &sh_w, 4, 114);
    let sh_dropout = DropoutShallow::new(3, 2, sh_data).unwrap();
    let reg_cases: Vec<Arc<dyn NoisyLoss>> = vec![
        Arc::new(DropConnect::new(l.clone())),
        Arc::new(AntiPgd::new(l.clone())),
        Arc::new(olm_dropout),
        Arc::new(sh_dropout),
    ];
    for s in &reg_cases {
        let reg = s.analytic_reg(None).unwrap();
        let num = NumericReg::new(s.clone(), None);
        for _ in 0..5 {
            let w = ParamVector::from_fn(s.dim(), |_, _| rng.gen_range(-1.2..1.2));
            let (a, b) = (reg.value(&w), num.value(&w));
            check(
                (a - b).abs() < 1e-5 * a.abs().max(1.0),
                format!("closed form reg {}", s.tag().id()),
            );
        }
    }
    let n_fail = failures.len();
    failures.dedup();
    finish(
        11,
        "invariant suites",
        opts,
        start,
        n_fail == 0,
        if n_fail == 0 {
            format!("{checks} checks green")
        } else {
            format!("{n_fail}/{checks} checks failed: {}", failures.join("; "))
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_quantiles_match_tables() {
        assert!((t_quantile_975(1) - 12.706).abs() < 1e-3);
        assert!((t_quantile_975(19) - 2.093).abs() < 1e-3);
        assert!((t_quantile_975(1000) - 1.962).abs() < 1e-3);
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - 4.303 / 3f64.sqrt()).abs() < 1e-3);
    }
}
