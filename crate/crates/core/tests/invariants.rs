use proptest::prelude::*;

use modelfree::algdiff::{DerivativeKernel, Quadrature, SlidingEstimator};
use modelfree::bench::catalog::RunOptions;
use modelfree::bench::{resolve, run_scenario};
use modelfree::control::broida;
use modelfree::plants::{build_plant, clamp, simulate_step, ActuatorConstraints};
use modelfree::signal::SampledSignal;
use modelfree::traject::ReferenceTrajectory;

const TS: f64 = 0.01;

fn estimator(order: usize, degree: usize, window: f64) -> SlidingEstimator {
    SlidingEstimator::new(DerivativeKernel::new(order, degree, window).unwrap(), TS, Quadrature::MomentMatched).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn streaming_matches_batch_estimate(
        order in 0usize..3, extra in 0usize..2, win in 5usize..40, f in 0.2f64..4.0, phase in 0.0f64..6.0,
    ) {
        let window = win as f64 * TS;
        let mut est = estimator(order, order + extra, window);
        let sig = SampledSignal::from_fn(100, TS, 0.0, |t| (f * t + phase).sin()).unwrap();
        for y in sig.samples() {
            est.push(*y);
        }
        let streamed = est.value().unwrap();
        let batch = est.estimate(&sig, sig.t_end()).unwrap();
        prop_assert!((streamed - batch).abs() <= 1e-9 * (1.0 + batch.abs()));
    }

    #[test]
    fn estimates_are_shift_invariant_for_derivatives(
        order in 1usize..3, c in -100.0f64..100.0, f in 0.2f64..3.0,
    ) {
        let est = estimator(order, 2, 0.3);
        let a = SampledSignal::from_fn(80, TS, 0.0, |t| (f * t).cos()).unwrap();
        let b = SampledSignal::from_fn(80, TS, 0.0, |t| (f * t).cos() + c).unwrap();
        let (ea, eb) = (est.estimate(&a, 0.6).unwrap(), est.estimate(&b, 0.6).unwrap());
        prop_assert!((ea - eb).abs() <= 1e-8 * (1.0 + c.abs()));
    }

    #[test]
    fn polynomials_are_differentiated_exactly(
        coeffs in proptest::collection::vec(-3.0f64..3.0, 1..4), t0 in 0.5f64..3.0,
    ) {
        let deg = coeffs.len() - 1;
        let p = |t: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c);
        let dp = |t: f64| coeffs.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c * t.powi(i as i32 - 1)).sum::<f64>();
        let est = estimator(1, deg.max(1), 0.4);
        let n = (t0 / TS).round() as usize + 1;
        let sig = SampledSignal::from_fn(n, TS, 0.0, p).unwrap();
        let t = sig.t_end();
        let got = est.estimate(&sig, t).unwrap();
        prop_assert!((got - dp(t)).abs() <= 1e-6 * (1.0 + dp(t).abs()));
    }

    #[test]
    fn clamp_respects_every_bound(
        ud in -10.0f64..10.0, up in -2.0f64..2.0, lo in -3.0f64..0.0, span in 0.0f64..4.0, rate in 0.0f64..50.0,
    ) {
        let c = ActuatorConstraints { u_min: vec![lo], u_max: vec![lo + span], du_min: vec![-rate], du_max: vec![rate] };
        let (u, sat) = clamp(&[ud], &[up], &c, TS);
        prop_assert!(u[0] >= lo && u[0] <= lo + span);
        prop_assert_eq!(sat[0], u[0] != ud);
        if !sat[0] {
            prop_assert_eq!(u[0], ud);
        }
    }

    #[test]
    fn bezier_reference_hits_its_endpoints(
        from in -5.0f64..5.0, to in -5.0f64..5.0, start in 0.0f64..5.0, dur in 0.1f64..10.0,
    ) {
        let r = ReferenceTrajectory::bezier_transition(from, to, start, dur).unwrap();
        prop_assert!((r.eval(start, 0).unwrap() - from).abs() < 1e-12);
        prop_assert!((r.eval(start + dur, 0).unwrap() - to).abs() < 1e-9 * (1.0 + to.abs()));
        for k in 1..3 {
            prop_assert!(r.eval(start, k).unwrap().abs() < 1e-9);
            prop_assert!(r.eval(start + dur, k).unwrap().abs() < 1e-9 * (1.0 + (to - from).abs() / dur.powi(k as i32)));
        }
    }

    #[test]
    fn broida_gains_are_positive_and_scale_with_gain(
        k in 0.1f64..10.0, t in 0.05f64..10.0, tau in 0.01f64..5.0, s in 0.1f64..10.0,
    ) {
        let a = broida::gains(k, t, tau).unwrap();
        let b = broida::gains(s * k, t, tau).unwrap();
        prop_assert!(a.kp > 0.0 && a.ki > 0.0 && a.kd > 0.0);
        prop_assert!((b.kp * s - a.kp).abs() <= 1e-12 * a.kp);
        prop_assert!((b.ki * s - a.ki).abs() <= 1e-12 * a.ki);
    }

    #[test]
    fn linear_plant_is_homogeneous(amp in -5.0f64..5.0) {
        let p = build_plant("stable-siso").unwrap();
        let mut unit = p.initial_state(&[0.0]);
        let mut scaled = p.initial_state(&[0.0]);
        for _ in 0..200 {
            simulate_step(&p, &mut unit, &[1.0], TS).unwrap();
            simulate_step(&p, &mut scaled, &[amp], TS).unwrap();
        }
        let (y1, ya) = (p.output(&unit, &[1.0])[0], p.output(&scaled, &[amp])[0]);
        prop_assert!((ya - amp * y1).abs() <= 1e-12 * (1.0 + ya.abs()));
    }
}

#[test]
fn noise_seed_changes_the_run_but_not_its_determinism() {
    let with = |seed| resolve("fig1-nominal", &RunOptions { seed: Some(seed), ..Default::default() }).unwrap();
    let a = run_scenario(&with(3)).unwrap();
    let b = run_scenario(&with(3)).unwrap();
    let c = run_scenario(&with(4)).unwrap();
    assert_eq!(a.trace("y_meas_1").unwrap().samples(), b.trace("y_meas_1").unwrap().samples());
    assert_ne!(a.trace("y_meas_1").unwrap().samples(), c.trace("y_meas_1").unwrap().samples());
    assert_eq!(a.config_hash, b.config_hash);
    assert_ne!(a.config_hash, c.config_hash);
}

#[test]
fn overrides_reach_the_controller() {
    let base = resolve("fig1-nominal", &RunOptions { noiseless: true, ..Default::default() }).unwrap();
    let opts = RunOptions {
        noiseless: true,
        overrides: vec![("controller.gains.0.kp".into(), toml::Value::Float(1.0))],
        ..Default::default()
    };
    let slow = resolve("fig1-nominal", &opts).unwrap();
    assert_ne!(base, slow);
    let (a, b) = (run_scenario(&base).unwrap(), run_scenario(&slow).unwrap());
    assert!(a.overall_rms() < b.overall_rms());
}

#[test]
fn actuator_bounds_hold_in_closed_loop() {
    let cfg = resolve("fig8-9-antiwindup", &RunOptions::default()).unwrap();
    let run = run_scenario(&cfg).unwrap();
    let u = run.trace("u_1").unwrap();
    assert!(u.samples().iter().all(|v| (-2.0 - 1e-12..=0.4 + 1e-12).contains(v)));
    assert!(u.samples().iter().any(|v| *v == 0.4 || *v == -2.0), "bounds never reached");
}
