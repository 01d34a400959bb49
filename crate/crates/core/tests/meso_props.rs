use nalgebra::dvector;
use proptest::prelude::*;
use rrr_core::meso::{
    condense_repeatedly, estimate_kernel, order_parameter, percolate_edges, scc_condense, support_digraph, BoxMeasure,
    Digraph, KernelMatrix,
};
use rrr_core::wdomains::CellPartition;

fn digraph() -> impl Strategy<Value = Digraph> {
    (1usize..=12).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 0..3 * n).prop_map(move |e| Digraph::new(n, e))
    })
}

fn reach(g: &Digraph) -> Vec<Vec<bool>> {
    let n = g.len();
    (0..n)
        .map(|s| {
            let mut seen = vec![false; n];
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for (a, b) in g.edges() {
                    if a == u && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
            seen
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn condensation_preserves_reachability(g in digraph()) {
        let c = scc_condense(&g);
        let (rg, rc) = (reach(&g), reach(&c.condensation));
        for u in 0..g.len() {
            for v in 0..g.len() {
                prop_assert_eq!(rg[u][v], rc[c.component[u]][c.component[v]]);
                prop_assert_eq!(c.component[u] == c.component[v], rg[u][v] && rg[v][u]);
            }
        }
    }

    #[test]
    fn condensation_is_idempotent(g in digraph()) {
        let once = scc_condense(&g);
        let twice = condense_repeatedly(&g, 2);
        prop_assert_eq!(twice.members.len(), once.members.len());
        prop_assert_eq!(twice.condensation.edge_count(), once.condensation.edge_count());
        prop_assert!(twice.members.iter().all(|m| m.len() == 1));
    }

    #[test]
    fn coupling_is_monotone(
        rows in (2usize..8).prop_flat_map(|n| prop::collection::vec(prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), n), n)),
        seed in any::<u64>(),
    ) {
        let n = rows.len();
        let hi: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|p| p.0).collect()).collect();
        let lo: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|p| p.0 * p.1).collect()).collect();
        let g_hi = percolate_edges(&KernelMatrix::from_rows(hi, vec![false; n]).unwrap(), seed);
        let g_lo = percolate_edges(&KernelMatrix::from_rows(lo, vec![false; n]).unwrap(), seed);
        prop_assert!(g_lo.graph.edges().all(|(u, v)| g_hi.graph.has_edge(u, v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn estimated_kernels_are_row_stochastic(beta in 0.0..1.5f64, seed in any::<u64>()) {
        let part = CellPartition::new(vec![dvector![0.0], dvector![2.0]], vec![dvector![0.0], dvector![3.0]]).unwrap();
        let mu = BoxMeasure::new(vec![-3.0], vec![4.0]).unwrap();
        let k = estimate_kernel(&part, beta, &mu, 5_000, seed).unwrap();
        for (i, row) in k.p.iter().enumerate() {
            if k.row_samples[i] > 0 {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        let phi = order_parameter(&support_digraph(&k, 0.0).unwrap());
        prop_assert!((0.0..=1.0).contains(&phi));
    }
}

#[test]
fn kernel_is_reproducible() {
    let part = CellPartition::new(vec![dvector![0.0], dvector![2.0]], vec![dvector![0.0], dvector![3.0]]).unwrap();
    let mu = BoxMeasure::new(vec![-3.0], vec![4.0]).unwrap();
    let a = estimate_kernel(&part, 0.5, &mu, 20_000, 5).unwrap();
    let b = estimate_kernel(&part, 0.5, &mu, 20_000, 5).unwrap();
    assert_eq!(a.p, b.p);
}
