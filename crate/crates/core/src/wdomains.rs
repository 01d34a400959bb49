//! W-domain partition for finite constraint sets.
//!
//! A cell `W(a, b)` collects the points whose nearest point in `A` is `a` and
//! whose reflection `2a - x` has nearest point `b` in `B`. On each cell the flow
//! field is the constant `b - a`. Closures are convex polyhedra described by
//! halfspaces `n·x <= c`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowProblem, IntegratorConfig, Trajectory, EventKind};
use crate::sets::{Point, SetOracle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub a: usize,
    pub b: usize,
}

impl CellId {
    pub fn new(a: usize, b: usize) -> Self {
        Self { a, b }
    }
}

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.a, self.b)
    }
}

#[derive(Debug, Clone)]
struct Halfspace {
    n: Point,
    c: f64,
    norm: f64,
}

impl Halfspace {
    fn new(n: Point, c: f64) -> Option<Self> {
        let norm = n.norm();
        (norm > 0.0).then_some(Self { n, c, norm })
    }

    fn signed_distance(&self, x: &[f64]) -> f64 {
        let dot: f64 = self.n.iter().zip(x).map(|(a, b)| a * b).sum();
        (dot - self.c) / self.norm
    }

    fn rate(&self, v: &Point) -> f64 {
        self.n.dot(v) / self.norm
    }
}

#[derive(Debug, Clone)]
pub struct CellPartition {
    a: Vec<Point>,
    b: Vec<Point>,
    dim: usize,
}

/// Two cells sharing a codimension-one boundary, with unit normal oriented
/// from `first` to `second`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interface {
    pub first: CellId,
    pub second: CellId,
    pub normal: Point,
    pub v1: Point,
    pub v2: Point,
    pub convergent: bool,
    pub sliding: Option<Point>,
    pub alpha: Option<f64>,
}

impl Interface {
    /// Both velocities point into the interface.
    pub fn attracting(&self) -> bool {
        self.normal.dot(&self.v1) > 0.0 && self.normal.dot(&self.v2) < 0.0
    }

    /// Tangential sliding speed, `s0` for this interface.
    pub fn tangential_speed(&self) -> Option<f64> {
        self.sliding.as_ref().map(|s| {
            let normal_part = self.normal.dot(s);
            (s - &self.normal * normal_part).norm()
        })
    }
}

/// A boundary piece shared by two cells. `segment` is exact for `m <= 2`
/// (a point in one dimension) and absent when adjacency was found by sampling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adjacency {
    pub first: CellId,
    pub second: CellId,
    pub segment: Option<(Point, Point)>,
}

impl CellPartition {
    pub fn new(a: Vec<Point>, b: Vec<Point>) -> Result<Self> {
        let first = a.first().ok_or(Error::EmptySet)?;
        if b.is_empty() {
            return Err(Error::EmptySet);
        }
        let dim = first.len();
        for p in a.iter().chain(&b) {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
        }
        for (name, pts) in [("A", &a), ("B", &b)] {
            for (i, p) in pts.iter().enumerate() {
                if pts[..i].contains(p) {
                    return Err(Error::InvalidSet(format!("{name} repeats the point at index {i}")));
                }
            }
        }
        Ok(Self { a, b, dim })
    }

    pub fn from_sets(a: &SetOracle, b: &SetOracle) -> Result<Self> {
        match (a, b) {
            (SetOracle::FinitePoints(pa), SetOracle::FinitePoints(pb)) => Self::new(pa.clone(), pb.clone()),
            _ => Err(Error::Unsupported("W-domains need two finite point sets".into())),
        }
    }

    pub fn from_problem(p: &FlowProblem) -> Result<Self> {
        Self::from_sets(p.a(), p.b())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a_points(&self) -> &[Point] {
        &self.a
    }

    pub fn b_points(&self) -> &[Point] {
        &self.b
    }

    pub fn all_cells(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.a.len()).flat_map(move |i| (0..self.b.len()).map(move |j| CellId::new(i, j)))
    }

    pub fn velocity(&self, c: CellId) -> Point {
        &self.b[c.b] - &self.a[c.a]
    }

    pub fn is_solution(&self, c: CellId) -> bool {
        self.velocity(c).norm() == 0.0
    }

    /// `d(a, b) = ‖b − a‖²`.
    pub fn d(&self, c: CellId) -> f64 {
        self.velocity(c).norm_squared()
    }

    /// Cell containing `x` under lowest-index tie breaking, plus a tie flag.
    pub fn cell_of(&self, x: &[f64]) -> (CellId, bool) {
        let (ia, tie_a) = nearest(&self.a, x);
        let r: Vec<f64> = self.a[ia].iter().zip(x).map(|(a, xi)| 2.0 * a - xi).collect();
        let (ib, tie_b) = nearest(&self.b, &r);
        (CellId::new(ia, ib), tie_a || tie_b)
    }

    fn a_halfspaces(&self, ia: usize) -> Vec<Halfspace> {
        let a = &self.a[ia];
        let aa = a.norm_squared();
        self.a
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != ia)
            .filter_map(|(_, other)| Halfspace::new((other - a) * 2.0, other.norm_squared() - aa))
            .collect()
    }

    fn b_halfspaces(&self, c: CellId) -> Vec<Halfspace> {
        let a = &self.a[c.a];
        let b = &self.b[c.b];
        let bb = b.norm_squared();
        self.b
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != c.b)
            .filter_map(|(_, other)| {
                let diff = other - b;
                let c0 = other.norm_squared() - bb - 4.0 * diff.dot(a);
                Halfspace::new(diff * -2.0, c0)
            })
            .collect()
    }

    fn halfspaces(&self, c: CellId) -> Vec<Halfspace> {
        let mut h = self.a_halfspaces(c.a);
        h.extend(self.b_halfspaces(c));
        h
    }

    /// Signed distance to the closure of a cell: `<= 0` inside.
    pub fn slack(&self, c: CellId, x: &[f64]) -> f64 {
        self.halfspaces(c)
            .iter()
            .map(|h| h.signed_distance(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Cells whose closure is within `tol` of `x`, in index order.
    pub fn cells_near(&self, x: &[f64], tol: f64) -> Vec<CellId> {
        let mut out = Vec::new();
        for ia in 0..self.a.len() {
            let sa = self
                .a_halfspaces(ia)
                .iter()
                .map(|h| h.signed_distance(x))
                .fold(f64::NEG_INFINITY, f64::max);
            if sa > tol {
                continue;
            }
            for ib in 0..self.b.len() {
                let c = CellId::new(ia, ib);
                let sb = self
                    .b_halfspaces(c)
                    .iter()
                    .map(|h| h.signed_distance(x))
                    .fold(f64::NEG_INFINITY, f64::max);
                if sb <= tol {
                    out.push(c);
                }
            }
        }
        out
    }

    /// Whether moving from `x` with the cell's own velocity keeps `x` in the
    /// cell's closure for a short positive time.
    pub fn admits_motion(&self, c: CellId, x: &[f64], tol: f64) -> bool {
        let v = self.velocity(c);
        let scale = v.norm().max(1e-300);
        self.halfspaces(c)
            .iter()
            .filter(|h| h.signed_distance(x) >= -tol)
            .all(|h| h.rate(&v) <= 1e-12 * scale)
    }

    /// Unit normal of the boundary between two cells, oriented from `i` to `j`.
    pub fn interface_normal(&self, i: CellId, j: CellId) -> Option<Point> {
        let dir = if i.a != j.a {
            &self.a[j.a] - &self.a[i.a]
        } else if i.b != j.b {
            &self.b[i.b] - &self.b[j.b]
        } else {
            return None;
        };
        let n = dir.norm();
        (n > 0.0).then(|| dir / n)
    }

    pub fn interface(&self, i: CellId, j: CellId) -> Result<Interface> {
        let normal = self
            .interface_normal(i, j)
            .ok_or_else(|| Error::InvalidArgument(format!("cells {i} and {j} have no separating normal")))?;
        let v1 = self.velocity(i);
        let v2 = self.velocity(j);
        let convergent = convergent_check(&v1, &v2, &normal);
        let (sliding, alpha) = if convergent {
            let (s, a) = sliding_velocity(&v1, &v2, &normal)?;
            (Some(s), Some(a))
        } else {
            (None, None)
        };
        Ok(Interface { first: i, second: j, normal, v1, v2, convergent, sliding, alpha })
    }

    fn scale(&self) -> f64 {
        self.a
            .iter()
            .chain(&self.b)
            .map(|p| p.amax())
            .fold(1.0, f64::max)
    }

    /// Cells with nonempty interior. Exact for `m <= 2`; by sampling otherwise.
    pub fn nonempty_cells(&self) -> Vec<CellId> {
        match self.dim {
            1 => self.all_cells().filter(|&c| self.interval(c).is_some()).collect(),
            2 => self.all_cells().filter(|&c| self.polygon(c).is_some()).collect(),
            _ => {
                let mut seen: Vec<CellId> = self.sample_points(4000, 0).iter().map(|x| self.cell_of(x.as_slice()).0).collect();
                seen.sort();
                seen.dedup();
                seen
            }
        }
    }

    fn interval(&self, c: CellId) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for h in self.halfspaces(c) {
            let k = h.c / h.n[0];
            if h.n[0] > 0.0 {
                hi = hi.min(k);
            } else {
                lo = lo.max(k);
            }
        }
        (hi - lo > 1e-12 * self.scale()).then_some((lo, hi))
    }

    fn polygon(&self, c: CellId) -> Option<Polygon> {
        let big = 1e6 * self.scale();
        let mut poly = Polygon::square(big);
        for (k, h) in self.halfspaces(c).iter().enumerate() {
            poly = poly.clip(h, Some(k));
            if poly.vertices.len() < 3 {
                return None;
            }
        }
        (poly.area() > 1e-12 * self.scale().powi(2)).then_some(poly)
    }

    /// Adjacent cell pairs among the nonempty cells.
    pub fn adjacency(&self) -> Vec<Adjacency> {
        let cells = self.nonempty_cells();
        let tol = 1e-9 * self.scale();
        let mut out = Vec::new();
        match self.dim {
            1 => {
                let iv: Vec<_> = cells.iter().map(|&c| (c, self.interval(c).unwrap())).collect();
                for (x, &(ci, (lo_i, hi_i))) in iv.iter().enumerate() {
                    for &(cj, (lo_j, hi_j)) in &iv[x + 1..] {
                        let touch = if (hi_i - lo_j).abs() <= tol {
                            Some(hi_i)
                        } else if (hi_j - lo_i).abs() <= tol {
                            Some(lo_i)
                        } else {
                            None
                        };
                        if let Some(p) = touch {
                            let pt = Point::from_vec(vec![p]);
                            out.push(Adjacency { first: ci, second: cj, segment: Some((pt.clone(), pt)) });
                        }
                    }
                }
            }
            2 => {
                let polys: Vec<_> = cells.iter().map(|&c| (c, self.polygon(c).unwrap())).collect();
                for (x, (ci, pi)) in polys.iter().enumerate() {
                    for (cj, _) in &polys[x + 1..] {
                        let hj = self.halfspaces(*cj);
                        if let Some(seg) = pi.shared_edge(&hj, tol) {
                            out.push(Adjacency { first: *ci, second: *cj, segment: Some(seg) });
                        }
                    }
                }
            }
            _ => out = self.sampled_adjacency(4000, 0),
        }
        out
    }

    fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.a.iter().chain(&self.b) {
            for k in 0..self.dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        for k in 0..self.dim {
            let w = (hi[k] - lo[k]).max(1.0);
            lo[k] -= w;
            hi[k] += w;
        }
        (lo, hi)
    }

    fn sample_points(&self, n: usize, seed: u64) -> Vec<Point> {
        let (lo, hi) = self.bounding_box();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point::from_iterator(self.dim, (0..self.dim).map(|k| rng.gen_range(lo[k]..hi[k]))))
            .collect()
    }

    fn sampled_adjacency(&self, n: usize, seed: u64) -> Vec<Adjacency> {
        let pts = self.sample_points(n, seed);
        let mut found: Vec<(CellId, CellId)> = Vec::new();
        for w in pts.windows(2) {
            let (c0, _) = self.cell_of(w[0].as_slice());
            let (c1, _) = self.cell_of(w[1].as_slice());
            if c0 == c1 {
                continue;
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let x = &w[0] + (&w[1] - &w[0]) * mid;
                if self.cell_of(x.as_slice()).0 == c0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let z = &w[0] + (&w[1] - &w[0]) * (0.5 * (lo + hi));
            let near = self.cells_near(z.as_slice(), 1e-9 * self.scale());
            if let [i, j] = near[..] {
                if !found.contains(&(i, j)) {
                    found.push((i, j));
                }
            }
        }
        found.sort();
        found
            .into_iter()
            .map(|(first, second)| Adjacency { first, second, segment: None })
            .collect()
    }

    /// Neighbors of `c` from an adjacency list, in index order.
    pub fn neighbors(adj: &[Adjacency], c: CellId) -> Vec<CellId> {
        let mut out: Vec<CellId> = adj
            .iter()
            .filter_map(|e| {
                if e.first == c {
                    Some(e.second)
                } else if e.second == c {
                    Some(e.first)
                } else {
                    None
                }
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

fn nearest(points: &[Point], x: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    let mut second = f64::INFINITY;
    for (k, p) in points.iter().enumerate() {
        let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            second = best_d;
            best_d = d;
            best = k;
        } else if d < second {
            second = d;
        }
    }
    let tie = second.is_finite() && second - best_d <= 1e-12 * best_d.max(1e-300);
    (best, tie)
}

/// Convex polygon with a label on each edge (edge `k` runs from vertex `k`
/// to `k + 1`); `None` marks the bounding square.
#[derive(Debug, Clone)]
struct Polygon {
    vertices: Vec<[f64; 2]>,
    labels: Vec<Option<usize>>,
}

impl Polygon {
    fn square(r: f64) -> Self {
        Self {
            vertices: vec![[-r, -r], [r, -r], [r, r], [-r, r]],
            labels: vec![None; 4],
        }
    }

    fn clip(&self, h: &Halfspace, label: Option<usize>) -> Self {
        let f = |p: &[f64; 2]| h.n[0] * p[0] + h.n[1] * p[1] - h.c;
        let n = self.vertices.len();
        let mut vertices = Vec::new();
        let mut labels = Vec::new();
        for k in 0..n {
            let p = self.vertices[k];
            let q = self.vertices[(k + 1) % n];
            let (fp, fq) = (f(&p), f(&q));
            if fp <= 0.0 {
                vertices.push(p);
                if fq <= 0.0 {
                    labels.push(self.labels[k]);
                } else {
                    let t = fp / (fp - fq);
                    vertices.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
                    labels.push(self.labels[k]);
                    labels.push(label);
                }
            } else if fq <= 0.0 {
                let t = fp / (fp - fq);
                vertices.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
                labels.push(self.labels[k]);
            }
        }
        Self { vertices, labels }
    }

    fn area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|k| {
                let p = self.vertices[k];
                let q = self.vertices[(k + 1) % n];
                p[0] * q[1] - q[0] * p[1]
            })
            .sum::<f64>()
            .abs()
    }

    /// Portion of a non-box edge lying inside the closure described by `hs`.
    fn shared_edge(&self, hs: &[Halfspace], tol: f64) -> Option<(Point, Point)> {
        let n = self.vertices.len();
        for k in 0..n {
            if self.labels[k].is_none() {
                continue;
            }
            let p = self.vertices[k];
            let q = self.vertices[(k + 1) % n];
            let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
            if len <= tol {
                continue;
            }
            // Counter-clockwise vertices: the outward normal points to the right of p -> q.
            let out = [(q[1] - p[1]) / len, -(q[0] - p[0]) / len];
            let line_tol = tol + 1e-14 * p[0].abs().max(p[1].abs()).max(q[0].abs()).max(q[1].abs());
            let facing = hs.iter().any(|h| {
                let inward = -(h.n[0] * out[0] + h.n[1] * out[1]) / h.norm;
                inward > 1.0 - 1e-9 && h.signed_distance(&p).abs() <= line_tol && h.signed_distance(&q).abs() <= line_tol
            });
            if !facing {
                continue;
            }
            let (mut t0, mut t1) = (0.0f64, 1.0f64);
            for h in hs {
                let fp = h.signed_distance(&p) - tol;
                let fq = h.signed_distance(&q) - tol;
                if fp > 0.0 && fq > 0.0 {
                    t1 = -1.0;
                    break;
                }
                if fp > 0.0 {
                    t0 = t0.max(fp / (fp - fq));
                } else if fq > 0.0 {
                    t1 = t1.min(fp / (fp - fq));
                }
            }
            if t1 > t0 && (t1 - t0) * len > 1e3 * tol {
                let at = |t: f64| Point::from_vec(vec![p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
                return Some((at(t0), at(t1)));
            }
        }
        None
    }
}

/// Strict convergent-normal test `(n·v1)(n·v2) < 0`.
pub fn convergent_check(v1: &Point, v2: &Point, n: &Point) -> bool {
    n.dot(v1) * n.dot(v2) < 0.0
}

/// Filippov sliding velocity and its convex weight `alpha` on `v1`.
pub fn sliding_velocity(v1: &Point, v2: &Point, n: &Point) -> Result<(Point, f64)> {
    let (n1, n2) = (n.dot(v1), n.dot(v2));
    if n1 * n2 >= 0.0 {
        return Err(Error::NonConvergent(n1 * n2));
    }
    let denom = n2 - n1;
    let alpha = n2 / denom;
    let v = (v1 * n2 - v2 * n1) / denom;
    Ok((v, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Descent {
    TowardFirst,
    TowardSecond,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchAnalysis {
    pub alpha: f64,
    pub spacing_sq: f64,
    pub convergent: bool,
    pub descent: Descent,
    /// `d` computed directly agrees with the predicted descent direction.
    pub cross_checked: bool,
}

/// Switch between `a1` and `a2` with `b` held fixed.
pub fn a_switch_analysis(a1: &Point, a2: &Point, b: &Point) -> Result<SwitchAnalysis> {
    let delta = a2 - a1;
    let spacing_sq = delta.norm_squared();
    if spacing_sq == 0.0 {
        return Err(Error::InvalidArgument("switch endpoints coincide".into()));
    }
    let alpha = delta.dot(&(b - a1));
    let convergent = alpha > 0.0 && alpha < spacing_sq;
    let half = 0.5 * spacing_sq;
    let descent = if alpha > half {
        Descent::TowardSecond
    } else if alpha < half {
        Descent::TowardFirst
    } else {
        Descent::Tie
    };
    let (d1, d2) = ((b - a1).norm_squared(), (b - a2).norm_squared());
    let cross_checked = match descent {
        Descent::TowardSecond => d2 < d1,
        Descent::TowardFirst => d1 < d2,
        Descent::Tie => d1 == d2,
    };
    Ok(SwitchAnalysis { alpha, spacing_sq, convergent, descent, cross_checked })
}

/// Switch between `b1` and `b2` with `a` held fixed; the same routine with roles swapped.
pub fn b_switch_analysis(b1: &Point, b2: &Point, a: &Point) -> Result<SwitchAnalysis> {
    a_switch_analysis(b1, b2, a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchKind {
    A,
    B,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainStep {
    pub from: CellId,
    pub to: CellId,
    pub kind: SwitchKind,
    pub interface: Interface,
    pub analysis: SwitchAnalysis,
    /// The switch verdict matches `convergent_check` on the corresponding bisector.
    pub verdict_agrees: bool,
    /// All strictly decreasing neighbors that were available.
    pub options: Vec<CellId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainEnd {
    Solution,
    Stuck,
}

#[derive(Debug, Clone, Serialize)]
pub struct DescentChain {
    pub cells: Vec<CellId>,
    pub d_values: Vec<f64>,
    pub steps: Vec<ChainStep>,
    pub min_spacing: f64,
    pub length_bound: usize,
    pub end: ChainEnd,
}

impl DescentChain {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.d_values.windows(2).all(|w| w[1] < w[0])
    }

    pub fn within_bound(&self) -> bool {
        self.len() <= self.length_bound
    }
}

/// Greedy chain of adjacent cells with strictly decreasing `d`, preferring
/// convergent interfaces and, among those, the steepest drop.
pub fn descent_chain(part: &CellPartition, start: CellId) -> Result<DescentChain> {
    let cells = part.nonempty_cells();
    if !cells.iter().any(|&c| part.is_solution(c)) {
        return Err(Error::InvalidArgument("A and B do not intersect".into()));
    }
    let mut ds: Vec<f64> = cells.iter().map(|&c| part.d(c)).collect();
    ds.sort_by(f64::total_cmp);
    let min_spacing = ds.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if min_spacing <= 1e-12 {
        return Err(Error::DistinctnessViolated(min_spacing));
    }
    let d_star = 0.0;
    let d_start = part.d(start);
    let length_bound = ((d_start - d_star) / min_spacing).floor() as usize;

    let adj = part.adjacency();
    let mut chain = DescentChain {
        cells: vec![start],
        d_values: vec![d_start],
        steps: Vec::new(),
        min_spacing,
        length_bound,
        end: ChainEnd::Stuck,
    };
    let mut cur = start;
    loop {
        if part.is_solution(cur) {
            chain.end = ChainEnd::Solution;
            break;
        }
        let d_cur = part.d(cur);
        let options: Vec<CellId> = CellPartition::neighbors(&adj, cur)
            .into_iter()
            .filter(|&c| part.d(c) < d_cur)
            .collect();
        if options.is_empty() {
            break;
        }
        let mut ranked: Vec<(bool, f64, CellId)> = options
            .iter()
            .map(|&c| {
                let conv = part.interface(cur, c).map(|i| i.convergent).unwrap_or(false);
                (conv, part.d(c), c)
            })
            .collect();
        ranked.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.total_cmp(&y.1)).then(x.2.cmp(&y.2)));
        let next = ranked[0].2;
        let interface = part.interface(cur, next)?;
        let (kind, analysis, direct) = if cur.a != next.a {
            let (a1, a2, b) = (&part.a[cur.a], &part.a[next.a], &part.b[cur.b]);
            let n = (a2 - a1).normalize();
            (SwitchKind::A, a_switch_analysis(a1, a2, b)?, convergent_check(&(b - a1), &(b - a2), &n))
        } else {
            let (b1, b2, a) = (&part.b[cur.b], &part.b[next.b], &part.a[cur.a]);
            let n = -(b2 - b1).normalize();
            (SwitchKind::B, b_switch_analysis(b1, b2, a)?, convergent_check(&(b1 - a), &(b2 - a), &n))
        };
        chain.steps.push(ChainStep {
            from: cur,
            to: next,
            kind,
            interface,
            verdict_agrees: analysis.convergent == direct,
            analysis,
            options,
        });
        chain.cells.push(next);
        chain.d_values.push(part.d(next));
        cur = next;
    }
    Ok(chain)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureBound {
    /// `Σ ℓ_j / s0` with `s0` the smallest tangential speed; absent when some speed is zero.
    pub bound: Option<f64>,
    pub s0: f64,
    pub note: Option<String>,
}

pub fn capture_time_bound(lengths: &[f64], speeds: &[f64]) -> Result<CaptureBound> {
    if lengths.len() != speeds.len() {
        return Err(Error::DimensionMismatch { expected: lengths.len(), got: speeds.len() });
    }
    let s0 = speeds.iter().copied().fold(f64::INFINITY, f64::min);
    if !(s0 > 0.0) {
        return Ok(CaptureBound {
            bound: None,
            s0: s0.max(0.0),
            note: Some("zero tangential speed on some interface; bound undefined".into()),
        });
    }
    Ok(CaptureBound { bound: Some(lengths.iter().sum::<f64>() / s0), s0, note: None })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureMeasurement {
    pub entry_time: f64,
    pub capture_time: f64,
    /// Time from first sliding entry to capture.
    pub elapsed: f64,
}

/// Time from the first sliding entry to capture along a piecewise trajectory.
pub fn measure_capture(traj: &Trajectory) -> Option<CaptureMeasurement> {
    let entry = traj.events.iter().find(|e| e.kind == EventKind::SlidingEntry)?.time;
    let capture = traj.events.iter().find(|e| e.kind == EventKind::Capture)?.time;
    Some(CaptureMeasurement { entry_time: entry, capture_time: capture, elapsed: capture - entry })
}

/// Integrate from `x0` and compare the measured capture time with the bound.
pub fn check_capture(
    p: &FlowProblem,
    x0: &Point,
    bound: &CaptureBound,
    horizon: f64,
) -> Result<(Option<CaptureMeasurement>, bool)> {
    let traj = crate::flow::integrate_piecewise(p, x0, horizon, &IntegratorConfig::default())?;
    let m = measure_capture(&traj);
    let ok = match (&m, bound.bound) {
        (Some(m), Some(b)) => m.elapsed <= b + 1e-8,
        _ => false,
    };
    Ok((m, ok))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn trap() -> CellPartition {
        CellPartition::new(vec![dvector![0.0], dvector![2.0]], vec![dvector![0.0], dvector![3.0]]).unwrap()
    }

    #[test]
    fn cell_of_examples() {
        let p = trap();
        assert_eq!(p.cell_of(&[0.5]).0, CellId::new(0, 0));
        assert!(p.is_solution(CellId::new(0, 0)));
        let c = p.cell_of(&[-2.0]).0;
        assert_eq!(c, CellId::new(0, 1));
        assert_eq!(p.velocity(c)[0], 3.0);
        let c = p.cell_of(&[3.0]).0;
        assert_eq!(c, CellId::new(1, 0));
        assert_eq!(p.velocity(c)[0], -2.0);
    }

    #[test]
    fn convergent_and_sliding_examples() {
        let n = dvector![0.0, 1.0];
        assert!(convergent_check(&dvector![1.0, 1.0], &dvector![1.0, -1.0], &n));
        assert!(!convergent_check(&dvector![1.0, 1.0], &dvector![2.0, 1.0], &n));
        assert!(!convergent_check(&dvector![1.0, 0.0], &dvector![1.0, -1.0], &n));

        let (v, a) = sliding_velocity(&dvector![1.0, 1.0], &dvector![1.0, -1.0], &n).unwrap();
        assert_eq!((v, a), (dvector![1.0, 0.0], 0.5));
        let (v, a) = sliding_velocity(&dvector![2.0, 1.0], &dvector![0.0, -1.0], &n).unwrap();
        assert_eq!((v, a), (dvector![1.0, 0.0], 0.5));
        let (v, _) = sliding_velocity(&dvector![1.0], &dvector![-2.0], &dvector![1.0]).unwrap();
        assert_eq!(v[0], 0.0);
        assert!(sliding_velocity(&dvector![1.0], &dvector![2.0], &dvector![1.0]).is_err());
    }

    #[test]
    fn a_switch_examples() {
        let (a1, a2) = (dvector![0.0], dvector![2.0]);
        let s = a_switch_analysis(&a1, &a2, &dvector![3.0]).unwrap();
        assert_eq!(s.alpha, 6.0);
        assert!(!s.convergent);
        assert!(!convergent_check(&dvector![3.0], &dvector![1.0], &dvector![1.0]));

        let s = a_switch_analysis(&a1, &a2, &dvector![1.2]).unwrap();
        assert!((s.alpha - 2.4).abs() < 1e-12);
        assert!(s.convergent);
        assert_eq!(s.descent, Descent::TowardSecond);
        assert!(s.cross_checked);

        let s = a_switch_analysis(&a1, &a2, &dvector![0.8]).unwrap();
        assert!((s.alpha - 1.6).abs() < 1e-12);
        assert!(s.convergent);
        assert_eq!(s.descent, Descent::TowardFirst);
        assert!(s.cross_checked);
    }

    #[test]
    fn trap_adjacency_and_chain() {
        let p = trap();
        let cells = p.nonempty_cells();
        assert_eq!(cells.len(), 4);
        let adj = p.adjacency();
        // (−∞,−1.5] (0,1) | [−1.5,1] (0,0) | [1,2.5] (1,1) | [2.5,∞) (1,0)
        assert_eq!(adj.len(), 3);
        let chain = descent_chain(&p, CellId::new(1, 1)).unwrap();
        assert_eq!(chain.end, ChainEnd::Solution);
        assert_eq!(*chain.cells.last().unwrap(), CellId::new(0, 0));
        assert!(chain.strictly_decreasing());
        assert!(chain.within_bound());

        let empty = descent_chain(&p, CellId::new(0, 0)).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn capture_bound_arithmetic() {
        assert_eq!(capture_time_bound(&[2.0], &[1.0]).unwrap().bound, Some(2.0));
        assert!(capture_time_bound(&[1.0], &[0.0]).unwrap().bound.is_none());
    }

    #[test]
    fn planar_normals_follow_bisectors() {
        let p = CellPartition::new(
            vec![dvector![0.0, 0.0], dvector![4.0, 0.0]],
            vec![dvector![0.0, 0.0], dvector![3.0, 3.0]],
        )
        .unwrap();
        let i = p.interface(CellId::new(0, 1), CellId::new(1, 1)).unwrap();
        assert_eq!(i.normal, dvector![1.0, 0.0]);
        assert!(i.attracting());
        assert_eq!(i.sliding.clone().unwrap(), dvector![0.0, 3.0]);
        assert_eq!(i.alpha, Some(0.25));
    }
}
