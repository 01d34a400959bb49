//! Mesoscopic diagnostics on the cell dynamics: Monte Carlo transition
//! kernels, support digraphs, SCC condensation, and coupled edge percolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sets::Point;
use crate::wdomains::{CellId, CellPartition};

/// Rows estimated from fewer samples are flagged.
pub const LOW_CONFIDENCE_SAMPLES: u64 = 30;
const CHUNK: usize = 8192;

/// Uniform reference measure on an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxMeasure {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxMeasure {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidArgument("measure box needs positive volume".into()));
        }
        Ok(Self { lower, upper })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point {
        Point::from_iterator(self.lower.len(), self.lower.iter().zip(&self.upper).map(|(l, u)| rng.gen_range(*l..*u)))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelMatrix {
    pub cells: Vec<CellId>,
    pub solution: Vec<bool>,
    /// Row-major `|V| × |V|` estimates.
    pub p: Vec<Vec<f64>>,
    pub row_samples: Vec<u64>,
    pub low_confidence: Vec<bool>,
    pub beta: f64,
    pub samples: usize,
    pub seed: u64,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index_of(&self, c: CellId) -> Option<usize> {
        self.cells.iter().position(|&x| x == c)
    }

    pub fn get(&self, from: CellId, to: CellId) -> Option<f64> {
        Some(self.p[self.index_of(from)?][self.index_of(to)?])
    }

    /// Build a kernel from explicit rows (used for synthetic tests).
    pub fn from_rows(p: Vec<Vec<f64>>, solution: Vec<bool>) -> Result<Self> {
        let n = p.len();
        if p.iter().any(|r| r.len() != n) || solution.len() != n {
            return Err(Error::InvalidArgument("kernel must be square with one solution flag per row".into()));
        }
        Ok(Self {
            cells: (0..n).map(|k| CellId::new(k, 0)).collect(),
            solution,
            row_samples: vec![0; n],
            low_confidence: vec![false; n],
            p,
            beta: f64::NAN,
            samples: 0,
            seed: 0,
        })
    }
}

/// Vertex set used for kernels of a partition: the nonempty cells.
pub fn kernel_cells(part: &CellPartition) -> Vec<CellId> {
    part.nonempty_cells()
}

/// Monte Carlo estimate of `P_β(i, j) = μ(W_i ∩ (W_j − β v_i)) / μ(W_i)`.
pub fn estimate_kernel(part: &CellPartition, beta: f64, mu: &BoxMeasure, samples: usize, seed: u64) -> Result<KernelMatrix> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument("beta must be nonnegative".into()));
    }
    if mu.lower.len() != part.dim() {
        return Err(Error::DimensionMismatch { expected: part.dim(), got: mu.lower.len() });
    }
    let mut cells = kernel_cells(part);
    let index = |cells: &[CellId], c: CellId| cells.binary_search(&c).ok();
    let chunks = samples.div_ceil(CHUNK);
    let pairs: Vec<(CellId, CellId)> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let count = CHUNK.min(samples - chunk * CHUNK);
            (0..count)
                .map(|_| {
                    let x = mu.sample(&mut rng);
                    let (src, _) = part.cell_of(x.as_slice());
                    let y = &x + part.velocity(src) * beta;
                    (src, part.cell_of(y.as_slice()).0)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    for &(s, t) in &pairs {
        for c in [s, t] {
            if let Err(pos) = cells.binary_search(&c) {
                cells.insert(pos, c);
            }
        }
    }
    let n = cells.len();
    let mut counts = vec![vec![0u64; n]; n];
    for &(s, t) in &pairs {
        counts[index(&cells, s).unwrap()][index(&cells, t).unwrap()] += 1;
    }
    let row_samples: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let p = counts
        .iter()
        .zip(&row_samples)
        .map(|(r, &tot)| r.iter().map(|&c| if tot > 0 { c as f64 / tot as f64 } else { 0.0 }).collect())
        .collect();
    Ok(KernelMatrix {
        solution: cells.iter().map(|&c| part.is_solution(c)).collect(),
        low_confidence: row_samples.iter().map(|&s| s < LOW_CONFIDENCE_SAMPLES).collect(),
        cells,
        p,
        row_samples,
        beta,
        samples,
        seed,
    })
}

/// Directed graph on `0..n` with sorted, deduplicated adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Digraph {
    pub adj: Vec<Vec<usize>>,
}

impl Digraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (u, v) in edges {
            adj[u].push(v);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        Self { adj }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj.iter().enumerate().flat_map(|(u, vs)| vs.iter().map(move |&v| (u, v)))
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    /// Subgraph induced by `keep`, relabeled in increasing order.
    pub fn induced(&self, keep: &[bool]) -> (Digraph, Vec<usize>) {
        let map: Vec<usize> = (0..self.len()).filter(|&k| keep[k]).collect();
        let mut new_index = vec![usize::MAX; self.len()];
        for (i, &k) in map.iter().enumerate() {
            new_index[k] = i;
        }
        let edges = self
            .edges()
            .filter(|&(u, v)| keep[u] && keep[v])
            .map(|(u, v)| (new_index[u], new_index[v]));
        (Digraph::new(map.len(), edges), map)
    }

    /// Edge list text: one `u v` pair per line, preceded by the vertex count.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("# vertices {}\n", self.len());
        for (u, v) in self.edges() {
            s.push_str(&format!("{u} {v}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellDigraph {
    pub cells: Vec<CellId>,
    pub solution: Vec<bool>,
    pub graph: Digraph,
}

/// Edge `i → j` iff `P(i, j) > τ`.
pub fn support_digraph(k: &KernelMatrix, tau: f64) -> Result<CellDigraph> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument("threshold must be nonnegative".into()));
    }
    let edges = k
        .p
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().filter(move |(_, &p)| p > tau).map(move |(j, _)| (i, j)));
    Ok(CellDigraph { cells: k.cells.clone(), solution: k.solution.clone(), graph: Digraph::new(k.len(), edges) })
}

#[derive(Debug, Clone, Serialize)]
pub struct CondensationResult {
    /// SCC index of each vertex; SCCs are numbered in reverse topological order.
    pub component: Vec<usize>,
    pub members: Vec<Vec<usize>>,
    pub condensation: Digraph,
    pub level: usize,
}

/// Tarjan's algorithm, iterative.
pub fn strongly_connected(g: &Digraph) -> (Vec<usize>, Vec<Vec<usize>>) {
    let n = g.len();
    const UNSET: usize = usize::MAX;
    let mut index = vec![UNSET; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![UNSET; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if index[root] != UNSET {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(top) = call.last_mut() {
            let v = top.0;
            if top.1 < g.adj[v].len() {
                let w = g.adj[v][top.1];
                top.1 += 1;
                if index[w] == UNSET {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let id = members.len();
                    let mut group = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp[w] = id;
                        group.push(w);
                        if w == v {
                            break;
                        }
                    }
                    group.sort_unstable();
                    members.push(group);
                }
            }
        }
    }
    (comp, members)
}

pub fn scc_condense(g: &Digraph) -> CondensationResult {
    let (component, members) = strongly_connected(g);
    let edges = g
        .edges()
        .map(|(u, v)| (component[u], component[v]))
        .filter(|(a, b)| a != b)
        .collect::<Vec<_>>();
    CondensationResult { condensation: Digraph::new(members.len(), edges), component, members, level: 1 }
}

/// Apply the condensation map `levels` times (at least once).
pub fn condense_repeatedly(g: &Digraph, levels: usize) -> CondensationResult {
    let mut res = scc_condense(g);
    for l in 2..=levels.max(1) {
        res = scc_condense(&res.condensation);
        res.level = l;
    }
    res
}

/// Largest SCC among non-solution cells divided by the full vertex count.
/// A singleton counts as size one whether or not it has a self-loop.
pub fn order_parameter(g: &CellDigraph) -> f64 {
    largest_wandering_scc(g) as f64 / g.graph.len().max(1) as f64
}

pub fn largest_wandering_scc(g: &CellDigraph) -> usize {
    let keep: Vec<bool> = g.solution.iter().map(|s| !s).collect();
    let (sub, _) = g.graph.induced(&keep);
    let (_, members) = strongly_connected(&sub);
    members.iter().map(Vec::len).max().unwrap_or(0)
}

/// Shared uniforms `U_ij ∈ (0, 1]`, drawn in row-major order from `seed`.
pub fn coupling_uniforms(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..n).map(|_| 1.0 - rng.gen::<f64>()).collect()).collect()
}

/// Open edge `i → j` iff `U_ij <= P(i, j)`.
pub fn percolate_edges(k: &KernelMatrix, seed: u64) -> CellDigraph {
    let u = coupling_uniforms(k.len(), seed);
    let edges = (0..k.len())
        .flat_map(|i| (0..k.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| u[i][j] <= k.p[i][j])
        .collect::<Vec<_>>();
    CellDigraph { cells: k.cells.clone(), solution: k.solution.clone(), graph: Digraph::new(k.len(), edges) }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub phi: f64,
    pub scc_max: usize,
    pub edges: usize,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Entries `(β_lo, β_hi, count)` where the estimated kernel decreases from one grid value to the next.
    pub monotonicity_violations: Vec<(f64, f64, usize)>,
}

pub fn beta_sweep(part: &CellPartition, betas: &[f64], mu: &BoxMeasure, samples: usize, seed: u64, tau: f64) -> Result<Sweep> {
    if betas.is_empty() {
        return Err(Error::InvalidArgument("beta grid is empty".into()));
    }
    let kernels = betas
        .iter()
        .map(|&b| estimate_kernel(part, b, mu, samples, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for k in &kernels {
        let g = support_digraph(k, tau)?;
        let scc_max = largest_wandering_scc(&g);
        rows.push(SweepRow { beta: k.beta, phi: order_parameter(&g), scc_max, edges: g.graph.edge_count(), samples, seed });
    }
    let mut order: Vec<usize> = (0..kernels.len()).collect();
    order.sort_by(|&x, &y| betas[x].total_cmp(&betas[y]));
    let mut monotonicity_violations = Vec::new();
    for w in order.windows(2) {
        let (lo, hi) = (&kernels[w[0]], &kernels[w[1]]);
        let mut count = 0;
        for (i, &ci) in lo.cells.iter().enumerate() {
            for (j, &cj) in lo.cells.iter().enumerate() {
                if let Some(ph) = hi.get(ci, cj) {
                    if lo.p[i][j] > ph {
                        count += 1;
                    }
                }
            }
        }
        monotonicity_violations.push((lo.beta, hi.beta, count));
    }
    Ok(Sweep { rows, monotonicity_violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn trap() -> CellPartition {
        CellPartition::new(vec![dvector![0.0], dvector![2.0]], vec![dvector![0.0], dvector![3.0]]).unwrap()
    }

    #[test]
    fn scc_example() {
        let g = Digraph::new(3, [(0, 1), (1, 0), (1, 2)]);
        let c = scc_condense(&g);
        assert_eq!(c.members.len(), 2);
        assert_eq!(c.component[0], c.component[1]);
        assert_eq!(c.condensation.edge_count(), 1);
    }

    #[test]
    fn order_parameter_examples() {
        let all_sol = CellDigraph { cells: vec![], solution: vec![true; 3], graph: Digraph::new(3, [(0, 1)]) };
        assert_eq!(order_parameter(&all_sol), 0.0);
        let cycle = CellDigraph {
            cells: vec![],
            solution: vec![false, false, false, true, true],
            graph: Digraph::new(5, [(0, 1), (1, 2), (2, 0), (2, 3)]),
        };
        assert_eq!(order_parameter(&cycle), 3.0 / 5.0);
    }

    #[test]
    fn identity_and_solution_rows() {
        let mu = BoxMeasure::new(vec![-3.0], vec![4.0]).unwrap();
        let k = estimate_kernel(&trap(), 0.0, &mu, 20_000, 1).unwrap();
        for i in 0..k.len() {
            for j in 0..k.len() {
                assert_eq!(k.p[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
        let g = support_digraph(&k, 0.0).unwrap();
        assert!(g.graph.edges().all(|(u, v)| u == v));
        assert_eq!(support_digraph(&k, 1.0).unwrap().graph.edge_count(), 0);
    }

    #[test]
    fn percolation_extremes() {
        let zeros = KernelMatrix::from_rows(vec![vec![0.0; 3]; 3], vec![false; 3]).unwrap();
        assert_eq!(percolate_edges(&zeros, 4).graph.edge_count(), 0);
        let ones = KernelMatrix::from_rows(vec![vec![1.0; 3]; 3], vec![false; 3]).unwrap();
        assert_eq!(percolate_edges(&ones, 4).graph.edge_count(), 9);
    }

    #[test]
    fn kernel_is_deterministic() {
        let mu = BoxMeasure::new(vec![-3.0], vec![4.0]).unwrap();
        let a = estimate_kernel(&trap(), 0.5, &mu, 30_000, 9).unwrap();
        let b = estimate_kernel(&trap(), 0.5, &mu, 30_000, 9).unwrap();
        assert_eq!(a.p, b.p);
    }
}
