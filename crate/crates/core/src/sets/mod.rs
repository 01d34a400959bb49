//! Exact metric projections and reflections onto the constraint-set classes
//! used by the RRR iteration.

mod bilinear;
pub mod poly;
mod spec;

use nalgebra::{DMatrix, DVector};

pub use bilinear::{project_equality, BilinearConfig, BilinearError, BilinearProjection};
pub use spec::{ProductBlockSpec, SetSpec};

use crate::error::{Error, Result};

pub type Point = DVector<f64>;

/// Set membership tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-10;
/// Residual tolerance for `u·s = y` in bilinear blocks.
pub const BILINEAR_RESIDUAL_TOL: f64 = 1e-8;
/// Orthonormality tolerance for affine tangent bases.
pub const ORTHONORMAL_TOL: f64 = 1e-12;

/// Numerical tolerances used by the oracles; `Default` gives the module constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub membership: f64,
    pub bilinear: BilinearConfig,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            membership: MEMBERSHIP_TOL,
            bilinear: BilinearConfig::default(),
        }
    }
}

/// Counters filled in while projecting; only bilinear blocks report anything.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub bilinear_blocks: u64,
    pub inexact_blocks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineSubspace {
    base: Point,
    /// Orthonormal columns spanning the direction space.
    basis: DMatrix<f64>,
}

impl AffineSubspace {
    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductBlock {
    pub indices: Vec<usize>,
    pub set: SetOracle,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetOracle {
    Affine(AffineSubspace),
    Sphere { center: Point, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    FinitePoints(Vec<Point>),
    Product { dim: usize, blocks: Vec<ProductBlock> },
    /// `{(u, s) ∈ R^r × R^r : u·s = target}`; coordinates are `u` then `s`.
    Bilinear { target: f64, rank: usize, nonneg: bool },
    /// `copies` stacked vectors of length `width`, all required equal.
    Consensus { copies: usize, width: usize, nonneg: bool },
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

fn finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidSet(format!("{what} has non-finite entries")))
    }
}

impl SetOracle {
    /// Affine subspace `base + span(basis columns)`; columns must be orthonormal.
    pub fn affine(base: Point, basis: DMatrix<f64>) -> Result<Self> {
        check_dim(base.len(), basis.nrows())?;
        finite(base.as_slice(), "affine base")?;
        let gram = basis.transpose() * &basis;
        let k = basis.ncols();
        let dev = (gram - DMatrix::<f64>::identity(k, k)).amax();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::InvalidSet(format!(
                "affine basis is not orthonormal (deviation {dev:.3e})"
            )));
        }
        Ok(SetOracle::Affine(AffineSubspace { base, basis }))
    }

    /// Line through `base` with direction `dir` (normalized here).
    pub fn line(base: Point, dir: Point) -> Result<Self> {
        let n = dir.norm();
        if n == 0.0 {
            return Err(Error::InvalidSet("line direction is zero".into()));
        }
        let m = dir.len();
        Self::affine(base, DMatrix::from_column_slice(m, 1, (dir / n).as_slice()))
    }

    pub fn sphere(center: Point, radius: f64) -> Result<Self> {
        finite(center.as_slice(), "sphere center")?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidSet(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(SetOracle::Sphere { center, radius })
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
            return Err(Error::InvalidSet("box requires lower <= upper".into()));
        }
        Ok(SetOracle::Box { lower, upper })
    }

    pub fn finite_points(points: Vec<Point>) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptySet)?;
        let m = first.len();
        for p in &points {
            check_dim(m, p.len())?;
            finite(p.as_slice(), "finite point")?;
        }
        Ok(SetOracle::FinitePoints(points))
    }

    /// Product over disjoint coordinate blocks that together cover `0..dim`.
    pub fn product(dim: usize, blocks: Vec<ProductBlock>) -> Result<Self> {
        let mut seen = vec![false; dim];
        for b in &blocks {
            check_dim(b.set.dim(), b.indices.len())?;
            for &i in &b.indices {
                if i >= dim || seen[i] {
                    return Err(Error::InvalidSet(format!(
                        "product blocks must partition 0..{dim} (index {i})"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidSet(format!("coordinate {i} not covered by any block")));
        }
        Ok(SetOracle::Product { dim, blocks })
    }

    pub fn bilinear(target: f64, rank: usize, nonneg: bool) -> Result<Self> {
        if rank == 0 || !target.is_finite() {
            return Err(Error::InvalidSet("bilinear block needs rank >= 1 and finite target".into()));
        }
        Ok(SetOracle::Bilinear { target, rank, nonneg })
    }

    pub fn consensus(copies: usize, width: usize, nonneg: bool) -> Result<Self> {
        if copies == 0 || width == 0 {
            return Err(Error::InvalidSet("consensus needs at least one copy of positive width".into()));
        }
        Ok(SetOracle::Consensus { copies, width, nonneg })
    }

    pub fn dim(&self) -> usize {
        match self {
            SetOracle::Affine(a) => a.base.len(),
            SetOracle::Sphere { center, .. } => center.len(),
            SetOracle::Box { lower, .. } => lower.len(),
            SetOracle::FinitePoints(p) => p[0].len(),
            SetOracle::Product { dim, .. } => *dim,
            SetOracle::Bilinear { rank, .. } => 2 * rank,
            SetOracle::Consensus { copies, width, .. } => copies * width,
        }
    }

    pub fn is_finite_set(&self) -> bool {
        matches!(self, SetOracle::FinitePoints(_))
    }

    /// Nearest point index of a finite set, ties broken by lowest index. The
    /// flag reports whether a tie (to relative 1e-12) occurred.
    pub fn nearest_index(&self, x: &[f64]) -> Result<(usize, bool)> {
        match self {
            SetOracle::FinitePoints(points) => {
                check_dim(points[0].len(), x.len())?;
                Ok(nearest(points, x))
            }
            _ => Err(Error::Unsupported("nearest_index needs a finite point set".into())),
        }
    }

    pub fn project(&self, x: &Point) -> Result<Point> {
        self.project_with(x, &Tolerances::default(), &mut ProjectionStats::default())
    }

    pub fn project_with(&self, x: &Point, tol: &Tolerances, stats: &mut ProjectionStats) -> Result<Point> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; x.len()];
        self.project_slice(x.as_slice(), &mut out, tol, stats)?;
        Ok(Point::from_vec(out))
    }

    /// `2 P(x) - x`, evaluated entrywise.
    pub fn reflect(&self, x: &Point) -> Result<Point> {
        let p = self.project(x)?;
        Ok(reflect_through(&p, x))
    }

    /// Euclidean distance from `x` to the set.
    pub fn distance(&self, x: &Point) -> Result<f64> {
        Ok((self.project(x)? - x).norm())
    }

    /// Whether `x` lies in the set to within `tol`.
    pub fn contains(&self, x: &Point, tol: f64) -> Result<bool> {
        match self {
            SetOracle::Bilinear { target, rank, nonneg } => {
                let (u, s) = x.as_slice().split_at(*rank);
                let r: f64 = u.iter().zip(s).map(|(a, b)| a * b).sum();
                let signs = !nonneg || x.iter().all(|&v| v >= -tol);
                Ok(signs && (r - target).abs() <= BILINEAR_RESIDUAL_TOL * target.abs().max(1.0))
            }
            SetOracle::Product { blocks, .. } => {
                for b in blocks {
                    let sub = Point::from_iterator(b.indices.len(), b.indices.iter().map(|&i| x[i]));
                    if !b.set.contains(&sub, tol)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            _ => Ok(self.distance(x)? <= tol),
        }
    }

    fn project_slice(&self, x: &[f64], out: &mut [f64], tol: &Tolerances, stats: &mut ProjectionStats) -> Result<()> {
        match self {
            SetOracle::Affine(a) => {
                let d = DVector::from_iterator(x.len(), x.iter().zip(a.base.iter()).map(|(xi, bi)| xi - bi));
                let coeff = a.basis.transpose() * d;
                let p = &a.base + &a.basis * coeff;
                out.copy_from_slice(p.as_slice());
            }
            SetOracle::Sphere { center, radius } => {
                let mut d: Vec<f64> = x.iter().zip(center.iter()).map(|(a, c)| a - c).collect();
                let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 {
                    d.iter_mut().for_each(|v| *v = 0.0);
                    d[0] = 1.0;
                } else {
                    d.iter_mut().for_each(|v| *v /= n);
                }
                for ((o, c), di) in out.iter_mut().zip(center.iter()).zip(&d) {
                    *o = c + radius * di;
                }
            }
            SetOracle::Box { lower, upper } => {
                for i in 0..x.len() {
                    out[i] = x[i].max(lower[i]).min(upper[i]);
                }
            }
            SetOracle::FinitePoints(points) => {
                let (k, _) = nearest(points, x);
                out.copy_from_slice(points[k].as_slice());
            }
            SetOracle::Product { blocks, .. } => {
                let mut sub = Vec::new();
                let mut sub_out = Vec::new();
                for b in blocks {
                    sub.clear();
                    sub.extend(b.indices.iter().map(|&i| x[i]));
                    sub_out.clear();
                    sub_out.resize(sub.len(), 0.0);
                    b.set.project_slice(&sub, &mut sub_out, tol, stats)?;
                    for (&i, &v) in b.indices.iter().zip(&sub_out) {
                        out[i] = v;
                    }
                }
            }
            SetOracle::Bilinear { target, rank, nonneg } => {
                let (u0, s0) = x.split_at(*rank);
                let res = bilinear::project_bilinear(u0, s0, *target, *nonneg, &tol.bilinear)
                    .map_err(bilinear_error)?;
                stats.bilinear_blocks += 1;
                if !res.exact {
                    stats.inexact_blocks += 1;
                }
                out[..*rank].copy_from_slice(&res.u);
                out[*rank..].copy_from_slice(&res.s);
            }
            SetOracle::Consensus { copies, width, nonneg } => {
                let avg = consensus_mean(x, *copies, *width, *nonneg);
                for c in 0..*copies {
                    out[c * width..(c + 1) * width].copy_from_slice(&avg);
                }
            }
        }
        Ok(())
    }
}

fn bilinear_error(e: BilinearError) -> Error {
    match e {
        BilinearError::Infeasible(y) => Error::InfeasibleBilinear(y),
        BilinearError::Root(msg) => Error::BilinearRoot(msg),
    }
}

pub(crate) fn reflect_through(p: &Point, x: &Point) -> Point {
    p.zip_map(x, |pi, xi| 2.0 * pi - xi)
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
    let tie = second.is_finite() && (second - best_d) <= 1e-12 * best_d.max(1e-300);
    (best, tie)
}

fn consensus_mean(x: &[f64], copies: usize, width: usize, nonneg: bool) -> Vec<f64> {
    let mut avg = vec![0.0; width];
    for c in 0..copies {
        for (a, v) in avg.iter_mut().zip(&x[c * width..(c + 1) * width]) {
            *a += v;
        }
    }
    for a in avg.iter_mut() {
        *a /= copies as f64;
        if nonneg {
            *a = a.max(0.0);
        }
    }
    avg
}

/// Projection onto the bilinear relation block, as a standalone operation.
pub fn project_bilinear(
    u0: &[f64],
    s0: &[f64],
    y: f64,
    nonneg: bool,
    cfg: &BilinearConfig,
) -> Result<BilinearProjection> {
    if u0.len() != s0.len() {
        return Err(Error::DimensionMismatch { expected: u0.len(), got: s0.len() });
    }
    if u0.is_empty() {
        return Err(Error::InvalidArgument("factor dimension must be at least 1".into()));
    }
    bilinear::project_bilinear(u0, s0, y, nonneg, cfg).map_err(bilinear_error)
}

/// Projection onto the consensus diagonal: the common value broadcast to all copies.
pub fn project_consensus(copies: &[Vec<f64>], nonneg: bool) -> Result<Vec<f64>> {
    let first = copies
        .first()
        .ok_or_else(|| Error::InvalidArgument("consensus needs at least one copy".into()))?;
    let width = first.len();
    for c in copies {
        check_dim(width, c.len())?;
    }
    let flat: Vec<f64> = copies.iter().flatten().copied().collect();
    Ok(consensus_mean(&flat, copies.len(), width, nonneg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn x_axis() -> SetOracle {
        SetOracle::line(dvector![0.0, 0.0], dvector![1.0, 0.0]).unwrap()
    }

    #[test]
    fn affine_projection_drops_normal_component() {
        assert_eq!(x_axis().project(&dvector![1.0, 2.0]).unwrap(), dvector![1.0, 0.0]);
        assert_eq!(x_axis().reflect(&dvector![1.0, 2.0]).unwrap(), dvector![1.0, -2.0]);
    }

    #[test]
    fn finite_projection_and_reflection() {
        let s = SetOracle::finite_points(vec![dvector![0.0], dvector![2.0]]).unwrap();
        assert_eq!(s.project(&dvector![0.9]).unwrap(), dvector![0.0]);
        // exact tie goes to the lower index
        assert_eq!(s.project(&dvector![1.0]).unwrap(), dvector![0.0]);
        assert!(s.nearest_index(&[1.0]).unwrap().1);
        let z = SetOracle::finite_points(vec![dvector![0.0]]).unwrap();
        assert_eq!(z.reflect(&dvector![3.0]).unwrap(), dvector![-3.0]);
    }

    #[test]
    fn sphere_radial_scaling() {
        let s = SetOracle::sphere(dvector![0.0, 0.0], 1.0).unwrap();
        assert_eq!(s.project(&dvector![2.0, 0.0]).unwrap(), dvector![1.0, 0.0]);
        assert_eq!(s.reflect(&dvector![2.0, 0.0]).unwrap(), dvector![0.0, 0.0]);
    }

    #[test]
    fn consensus_examples() {
        assert_eq!(project_consensus(&[vec![1.0], vec![3.0]], false).unwrap(), vec![2.0]);
        assert_eq!(project_consensus(&[vec![-3.0], vec![1.0]], true).unwrap(), vec![0.0]);
        assert_eq!(project_consensus(&[vec![-5.0]], true).unwrap(), vec![0.0]);
        assert!(project_consensus(&[], false).is_err());
        assert!(project_consensus(&[vec![1.0], vec![1.0, 2.0]], false).is_err());
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(matches!(SetOracle::finite_points(vec![]), Err(Error::EmptySet)));
        assert!(matches!(
            x_axis().project(&dvector![1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
        let skew = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(SetOracle::affine(dvector![0.0, 0.0], skew).is_err());
        assert!(SetOracle::sphere(dvector![0.0], 0.0).is_err());
    }

    #[test]
    fn product_scatters_blocks() {
        let p = SetOracle::product(
            3,
            vec![
                ProductBlock { indices: vec![2], set: SetOracle::boxed(vec![0.0], vec![1.0]).unwrap() },
                ProductBlock { indices: vec![0, 1], set: SetOracle::consensus(2, 1, false).unwrap() },
            ],
        )
        .unwrap();
        assert_eq!(p.project(&dvector![1.0, 3.0, 5.0]).unwrap(), dvector![2.0, 2.0, 1.0]);
        assert!(SetOracle::product(3, vec![]).is_err());
    }

    #[test]
    fn box_allows_infinite_bounds() {
        let b = SetOracle::boxed(vec![0.0, f64::NEG_INFINITY], vec![f64::INFINITY, 1.0]).unwrap();
        assert_eq!(b.project(&dvector![-1.0, 5.0]).unwrap(), dvector![0.0, 1.0]);
    }
}
