//! End-to-end checks through the public API only.

use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use zeroloss::dynamics::{
    constrained_gradient_flow, noisy_gd, rescaled_process, shifted_process, ConstrainedOptions, GdOptions, RecordPlan,
    Regime, ScalePlan,
};
use zeroloss::geometry::{limit_map_phi, tangent_projector, GapThreshold, PhiOptions};
use zeroloss::losses::{Dataset, Loss, MseLoss, OlmPredictor, Predictor, RingSine, SharedLoss};
use zeroloss::noise::{NoiseFamily, RngState};
use zeroloss::regularizers::{reg_label_noise, timescale_classify, Timescale};
use zeroloss::schemes::{AntiPgd, LabelNoise, NoisyLoss, Sgld};
use zeroloss::{Error, ParamVector};

fn ring() -> SharedLoss {
    Arc::new(RingSine::default())
}

fn polar(r: f64, t: f64) -> ParamVector {
    ParamVector::from_vec(vec![r * t.cos(), r * t.sin()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_lands_on_the_circle_and_is_idempotent(r in 0.8f64..1.2, t in 0.0f64..2.0 * PI) {
        let l = ring();
        let p = limit_map_phi(l.as_ref(), &polar(r, t), &PhiOptions::default()).unwrap().point;
        prop_assert!((p.norm() - 1.0).abs() < 1e-9);
        let again = limit_map_phi(l.as_ref(), &p, &PhiOptions::default()).unwrap().point;
        prop_assert!((again - &p).norm() < 1e-9);
    }

    #[test]
    fn phi_never_returns_a_point_off_the_zero_set(r in 0.2f64..2.5, t in 0.0f64..2.0 * PI) {
        // Far from Γ the flow can stall at critical points of the modulation.
        match limit_map_phi(ring().as_ref(), &polar(r, t), &PhiOptions::default()) {
            Ok(res) => prop_assert!((res.point.norm() - 1.0).abs() < 1e-9),
            Err(e) => prop_assert!(matches!(e, Error::NonAttracted(_)), "{}", e),
        }
    }

    #[test]
    fn tangent_projector_on_circle_is_rank_one(t in 0.0f64..2.0 * PI) {
        let w = polar(1.0, t);
        let pp = tangent_projector(ring().as_ref(), &w, GapThreshold::default(), 1e-8).unwrap();
        prop_assert_eq!(pp.manifold_dim, 1);
        // The tangent direction is (−sin t, cos t).
        let tangent = ParamVector::from_vec(vec![-t.sin(), t.cos()]);
        prop_assert!((&pp.p * &tangent - &tangent).norm() < 1e-8);
        prop_assert!((&pp.p * &w).norm() < 1e-8);
    }
}

#[test]
fn anti_pgd_shifted_process_tracks_the_limit_flow() {
    let l = ring();
    let scheme = AntiPgd::new(l.clone());
    let (alpha, sigma, t_end) = (0.1, 0.01, 1.0);
    let plan = ScalePlan::new(alpha, sigma, Regime::Nondegenerate, t_end).unwrap();
    let w0 = ParamVector::from_vec(vec![0.3, 1.6]);
    let grid: Vec<f64> = (0..=50).map(|i| t_end * i as f64 / 50.0).collect();
    let opts = GdOptions {
        record: RecordPlan::for_slow_times(&plan, &grid),
        distance_diagnostics: false,
        ..GdOptions::default()
    };
    let fam = NoiseFamily::gaussian(sigma, 2);
    let tr = noisy_gd(
        &scheme,
        &fam,
        &w0,
        alpha,
        plan.n_steps(),
        &mut RngState::new(11, 0),
        &opts,
    )
    .unwrap();
    let y = shifted_process(
        l.as_ref(),
        &rescaled_process(&tr, &plan).unwrap(),
        &plan,
        &PhiOptions::default(),
    )
    .unwrap();

    let y0 = limit_map_phi(l.as_ref(), &w0, &PhiOptions::default()).unwrap().point;
    let reg = scheme.analytic_reg(None).unwrap();
    let flow = constrained_gradient_flow(
        l.as_ref(),
        |w| reg.gradient(w),
        &y0,
        t_end,
        &ConstrainedOptions::default(),
    )
    .unwrap();
    let sup = grid
        .iter()
        .map(|&t| (y.at(t).unwrap() - flow.interpolate(t).unwrap()).norm())
        .fold(0.0, f64::max);
    assert!(sup < 0.05, "sup distance {sup}");
    // The flow itself moves an O(1) distance.
    assert!((flow.last().unwrap() - &y0).norm() > 0.3);
}

fn olm() -> Arc<MseLoss> {
    let pred = OlmPredictor::new(2);
    let w_star = ParamVector::from_vec(vec![1.2, 0.5, 0.8, 0.7]);
    let xs = vec![
        ParamVector::from_vec(vec![1.0, 0.2]),
        ParamVector::from_vec(vec![-0.3, 0.9]),
        ParamVector::from_vec(vec![0.6, -0.7]),
    ];
    let data = Arc::new(Dataset::teacher(&pred, &w_star, xs).unwrap());
    Arc::new(MseLoss::new(Arc::new(pred), data).unwrap())
}

#[test]
fn classification_of_standard_schemes() {
    let l = ring();
    let probe = [polar(1.0, 0.7)];
    let v = |s: Arc<dyn NoisyLoss>| timescale_classify(s, &probe, 1e-6).unwrap().verdict;
    assert_eq!(v(Arc::new(AntiPgd::new(l.clone()))), Timescale::Nondegenerate);
    assert_eq!(v(Arc::new(Sgld::new(l))), Timescale::Degenerate);

    let m = olm();
    let w = ParamVector::from_vec(vec![1.2, 0.5, 0.8, 0.7]);
    assert!(m.value(&w) < 1e-28);
    let label = timescale_classify(Arc::new(LabelNoise::new(m.clone())), std::slice::from_ref(&w), 1e-6).unwrap();
    assert_eq!(label.verdict, Timescale::Degenerate);
    // The deterministic limit of label noise is the (1/2N)ΔL flow.
    let lim = LabelNoise::new(m.clone()).limit_reg().unwrap();
    let direct = reg_label_noise(m.clone(), m.n());
    assert!((lim.value(&w) - direct.value(&w)).abs() < 1e-12);
}

#[test]
fn teacher_labels_put_the_teacher_on_the_zero_set() {
    let m = olm();
    let w = ParamVector::from_vec(vec![1.2, 0.5, 0.8, 0.7]);
    assert!(m.gradient(&w).norm() < 1e-12);
    assert_eq!(OlmPredictor::new(2).dim_w(), 4);
}
