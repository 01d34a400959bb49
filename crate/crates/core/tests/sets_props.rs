use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rrr_core::sets::{project_bilinear, BilinearConfig, ProductBlock, SetOracle};

fn vec_of(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-5.0..5.0f64, n).prop_map(DVector::from_vec)
}

fn affine3() -> impl Strategy<Value = SetOracle> {
    (vec_of(3), prop::collection::vec(-1.0..1.0f64, 3), prop::collection::vec(-1.0..1.0f64, 3))
        .prop_filter_map("degenerate basis", |(base, c1, c2)| {
            let b = DMatrix::from_column_slice(3, 2, &[c1, c2].concat());
            if b.clone().svd(false, false).singular_values.min() < 1e-2 {
                return None;
            }
            let q = b.qr().q();
            SetOracle::affine(base, q.columns(0, 2).into_owned()).ok()
        })
}

fn any_set() -> impl Strategy<Value = SetOracle> {
    prop_oneof![
        affine3(),
        (vec_of(3), 0.1..3.0f64).prop_map(|(c, r)| SetOracle::sphere(c, r).unwrap()),
        prop::collection::vec(-2.0..0.0f64, 3).prop_map(|lo| {
            let hi = lo.iter().map(|v| v + 1.5).collect();
            SetOracle::boxed(lo, hi).unwrap()
        }),
        prop::collection::vec(vec_of(3), 1..5).prop_map(|pts| SetOracle::finite_points(pts).unwrap()),
        (0.1..3.0f64, any::<bool>()).prop_map(|(y, nn)| {
            let inner = SetOracle::bilinear(y, 1, nn).unwrap();
            let side = SetOracle::boxed(vec![-1.0], vec![1.0]).unwrap();
            SetOracle::product(
                3,
                vec![ProductBlock { indices: vec![0, 2], set: inner }, ProductBlock { indices: vec![1], set: side }],
            )
            .unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_idempotent(set in any_set(), x in vec_of(3)) {
        let p = set.project(&x).unwrap();
        let pp = set.project(&p).unwrap();
        prop_assert!((&pp - &p).norm() <= 1e-8 * (1.0 + p.norm()));
        prop_assert!(set.contains(&p, 1e-7).unwrap());
    }

    #[test]
    fn affine_reflection_is_involution(set in affine3(), x in vec_of(3)) {
        let r = set.reflect(&set.reflect(&x).unwrap()).unwrap();
        prop_assert!((r - &x).norm() <= 1e-9 * (1.0 + x.norm()));
    }

    #[test]
    fn convex_projections_are_nonexpansive(
        set in prop_oneof![affine3(), prop::collection::vec(-2.0..0.0f64, 3).prop_map(|lo| {
            let hi = lo.iter().map(|v| v + 1.0).collect();
            SetOracle::boxed(lo, hi).unwrap()
        })],
        x in vec_of(3),
        y in vec_of(3),
    ) {
        let (px, py) = (set.project(&x).unwrap(), set.project(&y).unwrap());
        prop_assert!((px - py).norm() <= (x - y).norm() * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn rank_one_bilinear_matches_grid(u0 in -3.0..3.0f64, s0 in -3.0..3.0f64, y in 0.05..4.0f64) {
        let got = project_bilinear(&[u0], &[s0], y, false, &BilinearConfig::default()).unwrap();
        let d_got = (got.u[0] - u0).powi(2) + (got.s[0] - s0).powi(2);
        prop_assert!((got.u[0] * got.s[0] - y).abs() <= 1e-8 * y.max(1.0));
        // The hyperbola u s = y, both branches, parametrized by u.
        let mut best = f64::INFINITY;
        for k in 1..=20_000 {
            let t = 10f64.powf(-3.0 + 5.0 * k as f64 / 20_000.0);
            for u in [t, -t] {
                best = best.min((u - u0).powi(2) + (y / u - s0).powi(2));
            }
        }
        prop_assert!(d_got <= best + 1e-6 * (1.0 + best));
    }

    #[test]
    fn rank_two_bilinear_is_stationary(
        u0 in prop::collection::vec(-3.0..3.0f64, 2),
        s0 in prop::collection::vec(-3.0..3.0f64, 2),
        y in -4.0..4.0f64,
    ) {
        let got = project_bilinear(&u0, &s0, y, false, &BilinearConfig::default()).unwrap();
        let dot: f64 = got.u.iter().zip(&got.s).map(|(a, b)| a * b).sum();
        prop_assert!((dot - y).abs() <= 1e-8 * y.abs().max(1.0));
        // Lagrange condition: (u − u0, s − s0) is parallel to (s, u).
        let g: Vec<f64> = got.s.iter().chain(&got.u).copied().collect();
        let d: Vec<f64> = got.u.iter().zip(&u0).chain(got.s.iter().zip(&s0)).map(|(a, b)| a - b).collect();
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg > 1e-12 {
            let lam = g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / gg;
            let off: f64 = g.iter().zip(&d).map(|(a, b)| (b - lam * a).powi(2)).sum::<f64>().sqrt();
            prop_assert!(off <= 1e-6 * (1.0 + d.iter().map(|v| v * v).sum::<f64>().sqrt()));
        }
    }

    #[test]
    fn nonneg_bilinear_stays_nonneg(
        u0 in prop::collection::vec(-3.0..3.0f64, 1..4),
        s_seed in prop::collection::vec(-3.0..3.0f64, 4),
        y in 0.0..4.0f64,
    ) {
        let s0 = &s_seed[..u0.len()];
        let got = project_bilinear(&u0, s0, y, true, &BilinearConfig::default()).unwrap();
        prop_assert!(got.u.iter().chain(&got.s).all(|&v| v >= 0.0));
        let dot: f64 = got.u.iter().zip(&got.s).map(|(a, b)| a * b).sum();
        prop_assert!((dot - y).abs() <= 1e-8 * y.max(1.0));
    }
}

#[test]
fn bilinear_reference_point() {
    let got = project_bilinear(&[2.0], &[0.0], 1.0, false, &BilinearConfig::default()).unwrap();
    assert!((got.u[0] - 2.107).abs() < 1e-3, "{:?}", got);
    assert!((got.s[0] - 0.475).abs() < 1e-3, "{:?}", got);
}

#[test]
fn feasible_bilinear_input_is_fixed() {
    let got = project_bilinear(&[1.0], &[1.0], 1.0, true, &BilinearConfig::default()).unwrap();
    assert_eq!((got.u, got.s), (vec![1.0], vec![1.0]));
}

#[test]
fn infeasible_nonneg_target_is_rejected() {
    assert!(project_bilinear(&[1.0], &[1.0], -1.0, true, &BilinearConfig::default()).is_err());
}

#[test]
fn nearly_antipodal_start_reaches_the_positive_branch() {
    let (u0, s0) = ([1.1836881797345518], [-1.1838742110071967]);
    let p = project_bilinear(&u0, &s0, 1.0, true, &BilinearConfig::default()).unwrap();
    assert!((p.u[0] * p.s[0] - 1.0).abs() < 1e-10);
    assert!(p.u[0] > 0.0 && p.s[0] > 0.0);
}

#[test]
fn nearly_equal_factors_project_onto_zero_target() {
    let p = project_bilinear(&[6.00261778475986], &[6.002614458129916], 0.0, true, &BilinearConfig::default()).unwrap();
    assert!((p.u[0] * p.s[0]).abs() < 1e-10);
    assert!((p.u[0] - 6.00261778475986).abs() < 1e-8 && p.s[0].abs() < 1e-8);
}
