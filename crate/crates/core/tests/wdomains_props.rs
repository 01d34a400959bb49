use nalgebra::{dvector, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrr_core::sets::SetOracle;
use rrr_core::wdomains::{a_switch_analysis, convergent_check, sliding_velocity, CellPartition};
use rrr_core::FlowProblem;

fn points(n: usize, m: usize) -> impl Strategy<Value = Vec<DVector<f64>>> {
    prop::collection::vec(prop::collection::vec(-4.0..4.0f64, m).prop_map(DVector::from_vec), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normals_are_antisymmetric(a in points(3, 2), b in points(3, 2)) {
        let part = CellPartition::new(a, b);
        prop_assume!(part.is_ok());
        let part = part.unwrap();
        let cells: Vec<_> = part.all_cells().collect();
        for &i in &cells {
            for &j in &cells {
                if let (Some(n1), Some(n2)) = (part.interface_normal(i, j), part.interface_normal(j, i)) {
                    prop_assert!((n1 + n2).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shared_edges_are_normal_to_the_interface(a in points(3, 2), b in points(3, 2)) {
        let part = CellPartition::new(a, b);
        prop_assume!(part.is_ok());
        let part = part.unwrap();
        for adj in part.adjacency() {
            let n = part.interface_normal(adj.first, adj.second).unwrap();
            if let Some((p, q)) = adj.segment {
                let d = &q - &p;
                if d.norm() > 1e-9 {
                    prop_assert!(n.dot(&d).abs() <= 1e-6 * d.norm());
                }
            }
        }
    }

    #[test]
    fn convergent_interfaces_slide_tangentially(a in points(3, 2), b in points(3, 2)) {
        let part = CellPartition::new(a, b);
        prop_assume!(part.is_ok());
        let part = part.unwrap();
        for adj in part.adjacency() {
            let iface = part.interface(adj.first, adj.second).unwrap();
            prop_assert_eq!(iface.convergent, convergent_check(&iface.v1, &iface.v2, &iface.normal));
            if let (Some(v), Some(alpha)) = (&iface.sliding, iface.alpha) {
                prop_assert!(iface.normal.dot(v).abs() <= 1e-10 * (1.0 + iface.v1.norm() + iface.v2.norm()));
                prop_assert!(alpha > 0.0 && alpha < 1.0);
            }
        }
    }

    #[test]
    fn switch_weight_lies_in_unit_interval(
        a1 in prop::collection::vec(-3.0..3.0f64, 2),
        a2 in prop::collection::vec(-3.0..3.0f64, 2),
        b in prop::collection::vec(-3.0..3.0f64, 2),
    ) {
        let (a1, a2, b) = (DVector::from_vec(a1), DVector::from_vec(a2), DVector::from_vec(b));
        prop_assume!((&a2 - &a1).norm() > 1e-3);
        let s = a_switch_analysis(&a1, &a2, &b).unwrap();
        prop_assert!(s.cross_checked);
        let n = (&a2 - &a1).normalize();
        let direct = convergent_check(&(&b - &a1), &(&b - &a2), &n);
        prop_assert_eq!(s.convergent, direct);
        if s.convergent {
            let t = s.alpha / s.spacing_sq;
            prop_assert!(t > 0.0 && t < 1.0);
            let (_, w) = sliding_velocity(&(&b - &a1), &(&b - &a2), &n).unwrap();
            prop_assert!(w > 0.0 && w < 1.0);
        }
    }
}

#[test]
fn repeated_points_are_rejected() {
    let p = dvector![1.0, 2.0];
    assert!(CellPartition::new(vec![p.clone(), p.clone()], vec![p]).is_err());
}

#[test]
fn cells_tile_the_plane() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts = |rng: &mut ChaCha8Rng, n| -> Vec<DVector<f64>> {
        (0..n).map(|_| dvector![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect()
    };
    let (a, b) = (pts(&mut rng, 4), pts(&mut rng, 4));
    let part = CellPartition::new(a.clone(), b.clone()).unwrap();
    let problem =
        FlowProblem::new(SetOracle::finite_points(a).unwrap(), SetOracle::finite_points(b).unwrap()).unwrap();
    let cells: Vec<_> = part.all_cells().collect();
    let mut ties = 0;
    let samples = 10_000;
    for _ in 0..samples {
        let x = dvector![rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)];
        let (c, tie) = part.cell_of(x.as_slice());
        ties += tie as usize;
        assert!(part.slack(c, x.as_slice()) <= 1e-9);
        let inside = cells.iter().filter(|&&d| part.slack(d, x.as_slice()) < -1e-9).count();
        assert!(inside <= 1);
        assert!((problem.flow_field(&x).unwrap() - part.velocity(c)).norm() < 1e-12);
    }
    assert!((ties as f64) < 0.01 * samples as f64);
}
