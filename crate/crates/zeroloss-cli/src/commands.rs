//! Subcommand implementations. Each writes its files under the scenario
//! output directory and returns a JSON summary.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};
use zeroloss::dynamics::{
    constrained_gradient_flow, constrained_sde, noisy_gd, rescaled_process, shifted_process, ConstrainedOptions,
    ExitInfo, GaussianBrownian, GdOptions, RecordPlan, Regime, StepMethod, Trajectory,
};
use zeroloss::geometry::{limit_map_phi, phi_second_derivative_identity, GapThreshold, ManifoldPoint, PhiOptions};
use zeroloss::losses::Loss;
use zeroloss::noise::RngState;
use zeroloss::regularizers::{numeric_reg, timescale_classify, Classification, SharedReg, Timescale};
use zeroloss::{numdiff, Error, ParamVector};

use crate::config::ScenarioConfig;
use crate::error::{CliError, CliResult};
use crate::io::{self, ExtraColumn, Manifest, SeedRecord};
use crate::registry::{resolve, Scenario};

/// Stream ids keep the processes of one seed independent.
const STREAM_GD: u64 = 0;
const STREAM_SDE: u64 = 1;

fn prepare(cfg: &ScenarioConfig, base_dir: &Path) -> CliResult<(Scenario, PathBuf)> {
    let sc = resolve(cfg, base_dir)?;
    let out = io::output_dir(cfg);
    fs::create_dir_all(&out)?;
    // A copy of the data keeps the run reproducible when the source moves.
    if let Some(d) = &sc.dataset {
        io::write_dataset(&out.join("dataset.csv"), d)?;
    }
    Ok((sc, out))
}

fn extra(sc: &Scenario) -> ExtraColumn<'static> {
    if sc.ring {
        ExtraColumn::Theta
    } else {
        ExtraColumn::Arclength
    }
}

fn status(exit: &ExitInfo) -> &'static str {
    match exit {
        ExitInfo::Completed => "completed",
        ExitInfo::Converged { .. } => "converged",
        ExitInfo::LeftRegion { .. } => "left-region",
    }
}

fn manifest(
    command: &str,
    cfg: &ScenarioConfig,
    sc: &Scenario,
    runs: Vec<SeedRecord>,
    summary: Option<Value>,
) -> CliResult<Manifest> {
    Ok(Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: io::config_hash(cfg, sc.dataset.as_deref())?,
        config: cfg.clone(),
        n_steps: Some(sc.plan.n_steps()),
        runs,
        summary,
    })
}

fn phi_of(loss: &dyn Loss, w: &ParamVector) -> CliResult<ParamVector> {
    Ok(limit_map_phi(loss, w, &PhiOptions::default())?.point)
}

/// One noisy GD run on the slow clock: times are k·rate.
fn run_seed(sc: &Scenario, seed: u64, record: RecordPlan, diagnostics: bool) -> (Trajectory, &'static str) {
    let opts = GdOptions {
        record,
        stop: sc.stop.clone(),
        distance_diagnostics: diagnostics,
        ..GdOptions::default()
    };
    let mut rng = RngState::new(seed, STREAM_GD);
    let (mut tr, st) = match noisy_gd(
        sc.scheme.as_ref(),
        &sc.family,
        &sc.w0,
        sc.plan.alpha,
        sc.plan.n_steps(),
        &mut rng,
        &opts,
    ) {
        Ok(t) => {
            let st = status(&t.exit);
            (t, st)
        }
        Err(Error::Diverged { partial, .. }) => (*partial, "diverged"),
        Err(e) => unreachable!("noisy_gd on a validated scenario: {e}"),
    };
    let rate = sc.plan.rate();
    for (t, k) in tr.times.iter_mut().zip(&tr.steps) {
        *t = *k as f64 * rate;
    }
    (tr, st)
}

/// Runs every seed of the scenario and writes `seed_<s>.csv` plus a manifest.
pub fn simulate(cfg: &ScenarioConfig, base_dir: &Path) -> CliResult<Manifest> {
    let (sc, out) = prepare(cfg, base_dir)?;
    let stride = (sc.plan.n_steps() / cfg.record_points).max(1);
    let runs: Vec<CliResult<SeedRecord>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (tr, st) = run_seed(&sc, seed, RecordPlan::Stride(stride), true);
            let file = format!("seed_{seed}.csv");
            io::write_trajectory(&out.join(&file), &tr, extra(&sc))?;
            Ok(SeedRecord {
                seed,
                file,
                status: st.into(),
                points: tr.len(),
                final_point: tr.last().map_or(Vec::new(), |p| p.iter().copied().collect()),
            })
        })
        .collect();
    let runs = runs.into_iter().collect::<CliResult<Vec<_>>>()?;
    let m = manifest("simulate", cfg, &sc, runs, None)?;
    io::write_json(&out.join("manifest.json"), &m)?;
    Ok(m)
}

fn classify(sc: &Scenario, y0: &ParamVector) -> CliResult<Classification> {
    Ok(timescale_classify(sc.scheme.clone(), std::slice::from_ref(y0), 1e-6)?)
}

fn verdict_name(t: &Timescale) -> &'static str {
    match t {
        Timescale::Nondegenerate => "nondegenerate",
        Timescale::Degenerate => "degenerate",
        Timescale::TrivialOnBoth => "trivial-on-both",
        Timescale::Inconclusive => "inconclusive",
    }
}

/// Regularizer driving the deterministic slow limit, if there is one.
fn limit_regularizer(sc: &Scenario) -> Option<SharedReg> {
    match sc.plan.regime {
        Regime::Nondegenerate => Some(
            sc.scheme
                .analytic_reg(Some(&sc.family))
                .unwrap_or_else(|| numeric_reg(sc.scheme.clone(), None)),
        ),
        Regime::Degenerate => sc.scheme.limit_reg(),
    }
}

enum Limit {
    Flow(SharedReg),
    Sde,
    Fixed,
}

fn limit_kind(sc: &Scenario, verdict: &Timescale) -> Limit {
    if matches!(verdict, Timescale::TrivialOnBoth) {
        return Limit::Fixed;
    }
    match limit_regularizer(sc) {
        Some(r) => Limit::Flow(r),
        None if sc.scheme.degenerate_parts().is_some() => Limit::Sde,
        None => Limit::Fixed,
    }
}

fn limit_options(cfg: &ScenarioConfig, method: StepMethod) -> ConstrainedOptions {
    ConstrainedOptions {
        dt: cfg.limit_dt,
        method,
        record_every: ((cfg.plan.horizon / cfg.limit_dt) as usize / cfg.record_points).max(1),
        ..ConstrainedOptions::default()
    }
}

fn limit_flow_path(
    sc: &Scenario,
    reg: &SharedReg,
    y0: &ParamVector,
    cfg: &ScenarioConfig,
    record_every: usize,
) -> CliResult<Trajectory> {
    let opts = ConstrainedOptions {
        record_every,
        ..limit_options(cfg, StepMethod::Heun)
    };
    Ok(constrained_gradient_flow(
        sc.loss.as_ref(),
        |w| reg.gradient(w),
        y0,
        sc.plan.horizon,
        &opts,
    )?)
}

fn limit_sde_path(
    sc: &Scenario,
    y0: &ParamVector,
    cfg: &ScenarioConfig,
    seed: u64,
    record_every: usize,
) -> CliResult<Trajectory> {
    let parts = sc.scheme.degenerate_parts().expect("degenerate scheme");
    let opts = ConstrainedOptions {
        record_every,
        ..limit_options(cfg, StepMethod::Euler)
    };
    let mut b = GaussianBrownian {
        rng: RngState::new(seed, STREAM_SDE),
    };
    Ok(constrained_sde(
        sc.loss.as_ref(),
        parts,
        sc.plan.sigma,
        y0,
        sc.plan.horizon,
        &opts,
        &mut b,
    )?)
}

fn fixed_path(sc: &Scenario, y0: &ParamVector) -> Trajectory {
    let mut tr = Trajectory::new();
    for t in [0.0, sc.plan.horizon] {
        tr.push(t, y0.clone(), zeroloss::dynamics::diagnose(sc.loss.as_ref(), y0, true));
    }
    tr
}

/// Integrates the slow limit from Φ(w0): a constrained gradient flow, one
/// constrained SDE path per seed, or the fixed point when the scheme does not
/// move on Γ.
pub fn limit_flow(cfg: &ScenarioConfig, base_dir: &Path) -> CliResult<Manifest> {
    let (sc, out) = prepare(cfg, base_dir)?;
    let y0 = phi_of(sc.loss.as_ref(), &sc.w0)?;
    let cls = classify(&sc, &y0)?;
    let every = limit_options(cfg, StepMethod::Euler).record_every;
    let record = |file: String, seed: u64, tr: &Trajectory| -> CliResult<SeedRecord> {
        io::write_trajectory(&out.join(&file), tr, extra(&sc))?;
        Ok(SeedRecord {
            seed,
            file,
            status: status(&tr.exit).into(),
            points: tr.len(),
            final_point: tr.last().map_or(Vec::new(), |p| p.iter().copied().collect()),
        })
    };
    let (kind, runs) = match limit_kind(&sc, &cls.verdict) {
        Limit::Flow(reg) => {
            let tr = limit_flow_path(&sc, &reg, &y0, cfg, every)?;
            ("constrained-flow", vec![record("limit_flow.csv".into(), 0, &tr)?])
        }
        Limit::Fixed => (
            "fixed-point",
            vec![record("limit_flow.csv".into(), 0, &fixed_path(&sc, &y0))?],
        ),
        Limit::Sde => {
            let runs: Vec<CliResult<SeedRecord>> = cfg
                .seeds
                .par_iter()
                .map(|&s| {
                    record(
                        format!("limit_sde_seed_{s}.csv"),
                        s,
                        &limit_sde_path(&sc, &y0, cfg, s, every)?,
                    )
                })
                .collect();
            ("constrained-sde", runs.into_iter().collect::<CliResult<Vec<_>>>()?)
        }
    };
    let summary = json!({
        "limit": kind,
        "verdict": verdict_name(&cls.verdict),
        "phi_w0": y0.as_slice(),
        "reg_gradient": cls.reg_gradient,
        "tangent_noise": cls.tangent_noise,
        "drift": cls.drift,
    });
    let m = manifest("limit-flow", cfg, &sc, runs, Some(summary))?;
    io::write_json(&out.join("manifest.json"), &m)?;
    Ok(m)
}

fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return f64::NAN;
    }
    let x = q * (s.len() - 1) as f64;
    let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
    s[lo] + (s[hi] - s[lo]) * (x - lo as f64)
}

fn distance(ring: bool, a: &ParamVector, b: &ParamVector) -> f64 {
    if ring {
        let d = (a[1].atan2(a[0]) - b[1].atan2(b[0])).rem_euclid(2.0 * PI);
        d.min(2.0 * PI - d)
    } else {
        (a - b).norm()
    }
}

fn scenario_at(cfg: &ScenarioConfig, base_dir: &Path, alpha: f64, sigma: f64) -> CliResult<Scenario> {
    let mut c = cfg.clone();
    c.plan.alpha = alpha;
    c.plan.sigma = sigma;
    resolve(&c, base_dir)
}

/// Runs the scenario at each (α, σ) level and compares with its slow limit.
///
/// Deterministic limits: sup over a 201-point grid of the distance between
/// the shifted process and the flow, summarized by median and IQR over seeds;
/// passes when the medians decrease. Stochastic limits: E|Φ(W(T)) − Φ(w0)|²
/// against the same moment of independent SDE paths; passes when the finest
/// level is within 20%.
pub fn compare(cfg: &ScenarioConfig, base_dir: &Path, levels: &[(f64, f64)]) -> CliResult<Value> {
    if levels.is_empty() {
        return Err(CliError::Config("compare needs at least one level".into()));
    }
    let (sc, out) = prepare(cfg, base_dir)?;
    let y0 = phi_of(sc.loss.as_ref(), &sc.w0)?;
    let cls = classify(&sc, &y0)?;
    let horizon = cfg.plan.horizon;
    let grid: Vec<f64> = (0..=200).map(|i| horizon * i as f64 / 200.0).collect();
    let summary = match limit_kind(&sc, &cls.verdict) {
        Limit::Sde => {
            let sde: Vec<f64> = cfg
                .seeds
                .par_iter()
                .map(|&s| {
                    let tr = limit_sde_path(&sc, &y0, cfg, s, usize::MAX)?;
                    Ok((tr.last().unwrap() - &y0).norm_squared())
                })
                .collect::<CliResult<Vec<f64>>>()?;
            let target = sde.iter().sum::<f64>() / sde.len() as f64;
            let mut rows = Vec::new();
            for &(a, s) in levels {
                let lv = scenario_at(cfg, base_dir, a, s)?;
                let n = lv.plan.step_at(horizon);
                let ends: Vec<f64> = cfg
                    .seeds
                    .par_iter()
                    .map(|&seed| {
                        let (tr, _) = run_seed(&lv, seed, RecordPlan::Indices(vec![n]), false);
                        match tr.steps.last() {
                            Some(&k) if k == n => phi_of(lv.loss.as_ref(), tr.last().unwrap())
                                .map_or(f64::INFINITY, |p| (p - &y0).norm_squared()),
                            _ => f64::INFINITY,
                        }
                    })
                    .collect();
                let m = ends.iter().sum::<f64>() / ends.len() as f64;
                rows.push(json!({"alpha": a, "sigma": s, "second_moment": m, "rel_diff": (m - target).abs() / target}));
            }
            let last = rows.last().unwrap()["rel_diff"].as_f64().unwrap();
            json!({"limit": "constrained-sde", "sde_second_moment": target, "levels": rows, "pass": last < 0.2})
        }
        kind => {
            let fixed = matches!(kind, Limit::Fixed);
            let reference = match kind {
                Limit::Flow(reg) => limit_flow_path(&sc, &reg, &y0, cfg, 1)?,
                _ => fixed_path(&sc, &y0),
            };
            let mut rows = Vec::new();
            let mut medians = Vec::new();
            for &(a, s) in levels {
                let lv = scenario_at(cfg, base_dir, a, s)?;
                let sups: Vec<f64> = cfg
                    .seeds
                    .par_iter()
                    .map(|&seed| {
                        let (tr, st) = run_seed(&lv, seed, RecordPlan::for_slow_times(&lv.plan, &grid), false);
                        if st == "diverged" {
                            return f64::INFINITY;
                        }
                        let mut discrete = tr;
                        discrete.times = discrete.steps.iter().map(|&k| k as f64).collect();
                        let y = rescaled_process(&discrete, &lv.plan)
                            .and_then(|w| shifted_process(lv.loss.as_ref(), &w, &lv.plan, &PhiOptions::default()));
                        let Ok(y) = y else { return f64::INFINITY };
                        grid.iter()
                            .filter(|&&t| t <= y.end_time())
                            .map(|&t| distance(sc.ring, y.at(t).unwrap(), &reference.interpolate(t).unwrap()))
                            .fold(0.0, f64::max)
                    })
                    .collect();
                let med = median(&sups);
                medians.push(med);
                rows.push(json!({
                    "alpha": a, "sigma": s, "median_sup": med,
                    "iqr": [quantile(&sups, 0.25), quantile(&sups, 0.75)],
                }));
            }
            let decreasing = medians.windows(2).all(|p| p[1] < p[0]);
            json!({
                "limit": if fixed { "fixed-point" } else { "constrained-flow" },
                "metric": if sc.ring { "angular" } else { "euclidean" },
                "levels": rows,
                "pass": decreasing,
            })
        }
    };
    io::write_json(&out.join("compare.json"), &summary)?;
    if summary["pass"] != json!(true) {
        return Err(CliError::Failed(format!("compare: {summary}")));
    }
    Ok(summary)
}

/// Regularizer values and gradients at probe points (default Φ(w0)).
pub fn reg_report(cfg: &ScenarioConfig, base_dir: &Path, probes: &[Vec<f64>]) -> CliResult<Value> {
    let (sc, out) = prepare(cfg, base_dir)?;
    let pts: Vec<ParamVector> = if probes.is_empty() {
        vec![phi_of(sc.loss.as_ref(), &sc.w0)?]
    } else {
        probes
            .iter()
            .map(|p| {
                if p.len() != sc.loss.dim() {
                    return Err(CliError::Config(format!(
                        "probe has {} entries, expected {}",
                        p.len(),
                        sc.loss.dim()
                    )));
                }
                Ok(ParamVector::from_row_slice(p))
            })
            .collect::<CliResult<_>>()?
    };
    let numeric = numeric_reg(sc.scheme.clone(), None);
    let analytic = sc.scheme.analytic_reg(Some(&sc.family));
    let limit = sc.scheme.limit_reg();
    let cls = timescale_classify(sc.scheme.clone(), &pts, 1e-6)?;
    let entry = |r: &SharedReg, w: &ParamVector| json!({"name": r.name(), "value": r.value(w), "gradient": r.gradient(w).as_slice()});
    let rows: Vec<Value> = pts
        .iter()
        .map(|w| {
            let mut row = json!({"point": w.as_slice(), "numeric": entry(&numeric, w)});
            if let Some(a) = &analytic {
                let (gn, ga) = (numeric.gradient(w), a.gradient(w));
                row["analytic"] = entry(a, w);
                row["gradient_rel_err"] = json!(numdiff::rel_err(&gn, &ga, 1e-12));
            }
            if let Some(l) = &limit {
                row["limit"] = entry(l, w);
            }
            row
        })
        .collect();
    let summary = json!({
        "scheme": sc.scheme.tag().id(),
        "noise": sc.family.kind_name(),
        "verdict": verdict_name(&cls.verdict),
        "reg_gradient": cls.reg_gradient,
        "tangent_noise": cls.tangent_noise,
        "drift": cls.drift,
        "probes": rows,
    });
    io::write_json(&out.join("reg_report.json"), &summary)?;
    Ok(summary)
}

/// Tolerances of the limit-map oracle checks.
pub const PHI_JACOBIAN_TOL: f64 = 1e-4;
pub const PHI_SECOND_TOL: f64 = 1e-3;
pub const PHI_HESSIAN_TOL: f64 = 1e-6;

/// Checks ∂Φ = P, ∂²Φ[I] against second differences of Φ and the ∇²L
/// special case against the general formula, at points (default Φ(w0)).
pub fn verify_phi(cfg: &ScenarioConfig, base_dir: &Path, points: &[Vec<f64>]) -> CliResult<Value> {
    let (sc, out) = prepare(cfg, base_dir)?;
    let l = sc.loss.as_ref();
    let tight = PhiOptions {
        rk_tol: 1e-13,
        tol_grad: 1e-12,
        ..PhiOptions::default()
    };
    let phi = |x: &ParamVector| limit_map_phi(l, x, &tight).map(|r| r.point);
    let pts: Vec<ParamVector> = if points.is_empty() {
        vec![phi(&sc.w0)?]
    } else {
        points.iter().map(|p| ParamVector::from_row_slice(p)).collect()
    };
    let mut rows = Vec::new();
    let mut pass = true;
    for w in &pts {
        if w.len() != l.dim() {
            return Err(CliError::Config(format!(
                "point has {} entries, expected {}",
                w.len(),
                l.dim()
            )));
        }
        let mp = ManifoldPoint::at(l, w)?;
        let phi_u = |x: &ParamVector| phi(x).unwrap_or_else(|_| ParamVector::from_element(x.len(), f64::NAN));
        let jac_err = (numdiff::jacobian(phi_u, w, 1e-5) - &mp.proj.p).amax();
        let formula = phi_second_derivative_identity(l, w, GapThreshold::default(), 1e-5)?;
        let base = phi_u(w);
        let lap = |h: f64| {
            let mut acc = ParamVector::zeros(w.len());
            for i in 0..w.len() {
                let mut e = ParamVector::zeros(w.len());
                e[i] = h;
                acc += (phi_u(&(w + &e)) + phi_u(&(w - &e)) - &base * 2.0) / (h * h);
            }
            acc
        };
        // Richardson extrapolation removes the O(h²) term of the differences.
        let oracle = (lap(5e-3) * 4.0 - lap(1e-2)) / 3.0;
        let second_err = (formula - oracle).norm();
        let hess_err = (mp.phi_second(&mp.hessian) - mp.phi_second_hessian()).norm();
        let ok = jac_err < PHI_JACOBIAN_TOL && second_err < PHI_SECOND_TOL && hess_err < PHI_HESSIAN_TOL;
        pass &= ok;
        rows.push(json!({
            "point": w.as_slice(), "jacobian_err": jac_err, "second_identity_err": second_err,
            "second_hessian_err": hess_err, "pass": ok,
        }));
    }
    let summary = json!({
        "tolerances": {"jacobian": PHI_JACOBIAN_TOL, "second_identity": PHI_SECOND_TOL, "second_hessian": PHI_HESSIAN_TOL},
        "points": rows,
        "pass": pass,
    });
    io::write_json(&out.join("verify_phi.json"), &summary)?;
    if !pass {
        return Err(CliError::Failed(format!("verify-phi: {summary}")));
    }
    Ok(summary)
}
