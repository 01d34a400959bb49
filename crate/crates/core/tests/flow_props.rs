use nalgebra::{dvector, DVector};
use proptest::prelude::*;
use rrr_core::catalog;
use rrr_core::flow::{euler_error_study, integrate_flow, run_rrr, FlowMode, IntegratorConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gap_is_monotone_on_smooth_instances(deg in 10.0..90.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64) {
        let p = catalog::lines_at_angle(deg.to_radians());
        let traj = integrate_flow(&p, &dvector![x, y], 3.0, FlowMode::Smooth, &IntegratorConfig::default()).unwrap();
        for w in traj.gaps.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-6) + 1e-300);
        }
    }

    #[test]
    fn discrete_time_is_eps_times_k(eps in 0.001..0.5f64, x in 0.2..2.0f64) {
        let p = catalog::orthogonal_lines();
        let run = run_rrr(&p, &dvector![x, 0.3], eps, 50_000, 1e-3).unwrap();
        let k = run.k.unwrap();
        prop_assert_eq!(run.t_star.unwrap(), eps * k as f64);
        for (i, t) in run.trajectory.times.iter().enumerate() {
            prop_assert_eq!(*t, eps * i as f64);
        }
    }

    #[test]
    fn euler_error_is_first_order(deg in 20.0..80.0f64, x in 0.3..1.5f64) {
        let p = catalog::lines_at_angle(deg.to_radians());
        let study = euler_error_study(&p, &dvector![x, -0.4], 1.5, &[0.04, 0.02, 0.01]).unwrap();
        for r in study.ratios.iter().map(|r| r.unwrap()) {
            prop_assert!((1.7..=2.3).contains(&r), "ratio {}", r);
        }
    }
}

#[test]
fn feasible_start_is_fixed() {
    let p = catalog::circle_and_line();
    let x = dvector![0.8, 0.6];
    let v = p.flow_field(&x).unwrap();
    assert!(v.norm() < 1e-12);
    assert!((p.rrr_step(&x, 0.3).unwrap() - x).norm() < 1e-12);
}

#[test]
fn parallel_lines_translate_rigidly() {
    let p = catalog::parallel_lines();
    let x0 = dvector![0.4, 0.2];
    let v = p.flow_field(&x0).unwrap();
    let eps = 0.05;
    let mut x = x0.clone();
    for k in 1..=200 {
        x = p.rrr_step(&x, eps).unwrap();
        let expect: DVector<f64> = &x0 + &v * (eps * k as f64);
        assert!((&x - expect).norm() < 1e-12);
    }
}

#[test]
fn planar_sliding_capture_times() {
    let p = catalog::planar_sliding();
    let (x0, _, _) = catalog::planar_sliding_geometry();
    let traj = integrate_flow(&p, &x0, 3.0, FlowMode::Piecewise, &IntegratorConfig::default()).unwrap();
    let cap = rrr_core::wdomains::measure_capture(&traj).unwrap();
    assert!((cap.entry_time - 1.0 / 3.0).abs() < 1e-9);
    assert!((cap.capture_time - 4.0 / 3.0).abs() < 1e-9);
    assert!((traj.position_at(4.0 / 3.0) - dvector![2.0, -5.0]).norm() < 1e-8);
    assert!(traj.times_strictly_increasing());
}
