use nalgebra::DMatrix;
use proptest::prelude::*;
use rrr_core::ledm::{build_instance, lift, records_csv, run_trials, LedmOverrides};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn planted_states_are_fixed_points(
        m in 2usize..=5,
        r in 1usize..=3,
        seed in prop::collection::vec(0.05..1.5f64, 30),
    ) {
        let w = DMatrix::from_fn(m, r, |i, k| seed[(i * r + k) % 30]);
        let z = DMatrix::from_fn(m, r, |i, k| seed[(7 + i * r + k) % 30]);
        let y = &w * z.transpose();
        let rows: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| y[(i, j)]).collect()).collect();
        let inst = build_instance(m, &LedmOverrides { y: Some(rows), rank: Some(r), ..Default::default() }).unwrap();
        let x = inst.state_from_factors(&w, &z).unwrap();
        let v = lift(&inst).unwrap().flow_field(&x).unwrap();
        prop_assert!(v.norm() <= 1e-10, "|v| = {}", v.norm());
        prop_assert!(rrr_core::ledm::residual(&inst, x.as_slice()) <= 1e-12);
    }

    #[test]
    fn runs_are_deterministic(m in 2usize..=4, beta in 0.05..0.5f64, seed in 0u64..1000) {
        let inst = build_instance(m, &LedmOverrides { k_max: Some(200), ..Default::default() }).unwrap();
        let a = run_trials(&inst, beta, 3, seed).unwrap();
        let b = run_trials(&inst, beta, 3, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(records_csv(&a).unwrap(), records_csv(&b).unwrap());
        for r in &a {
            prop_assert!(r.identity_holds());
            let stop = match (r.k_enter, r.k_solve) {
                (Some(a), Some(b)) => a.max(b),
                _ => 200,
            };
            prop_assert_eq!(r.trace.len(), stop + 1);
        }
    }
}

#[test]
fn csv_has_expected_header_and_lf() {
    let inst = build_instance(3, &LedmOverrides { k_max: Some(5), ..Default::default() }).unwrap();
    let recs = run_trials(&inst, 0.2, 2, 0).unwrap();
    let text = records_csv(&recs).unwrap();
    assert!(text.starts_with("m,beta,seed,k_enter,k_solve,censored,T_search,T_conv,err_final\n"));
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().count(), 3);
}
