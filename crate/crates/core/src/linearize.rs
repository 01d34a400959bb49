//! Linearization of the flow at feasible points of smooth instances.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{FlowProblem, Trajectory};
use crate::sets::{Point, SetOracle};

/// Angles below this many radians count as intersection directions.
pub const TRANSVERSE_ANGLE_MIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TangentProjector {
    p: DMatrix<f64>,
}

impl TangentProjector {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::InvalidArgument("projector must be square".into()));
        }
        let idem = (&p * &p - &p).amax();
        let sym = (&p - p.transpose()).amax();
        if idem > 1e-10 || sym > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "not an orthogonal projector (idempotence {idem:.1e}, symmetry {sym:.1e})"
            )));
        }
        Ok(Self { p })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// Orthonormal basis of the range, one column per direction.
    pub fn basis(&self) -> DMatrix<f64> {
        let eig = self.p.clone().symmetric_eigen();
        let cols: Vec<_> = (0..self.dim())
            .filter(|&k| eig.eigenvalues[k] > 0.5)
            .map(|k| eig.eigenvectors.column(k).into_owned())
            .collect();
        if cols.is_empty() {
            DMatrix::zeros(self.dim(), 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }
}

/// Projector onto the tangent space of `set` at `x`.
pub fn tangent_projector(set: &SetOracle, x: &Point) -> Result<TangentProjector> {
    if x.len() != set.dim() {
        return Err(Error::DimensionMismatch { expected: set.dim(), got: x.len() });
    }
    let m = x.len();
    let p = match set {
        SetOracle::Affine(a) => {
            let dist = set.distance(x)?;
            if dist > 1e-8 {
                return Err(Error::InvalidArgument(format!("point is {dist:.2e} away from the set")));
            }
            a.basis() * a.basis().transpose()
        }
        SetOracle::Sphere { center, radius } => {
            let d = x - center;
            if (d.norm() - radius).abs() > 1e-8 {
                return Err(Error::InvalidArgument("point is not on the sphere".into()));
            }
            let u = d / *radius;
            DMatrix::identity(m, m) - &u * u.transpose()
        }
        SetOracle::Product { blocks, .. } => {
            let mut p = DMatrix::zeros(m, m);
            for b in blocks {
                let sub = Point::from_iterator(b.indices.len(), b.indices.iter().map(|&i| x[i]));
                let tp = tangent_projector(&b.set, &sub)?;
                for (r, &i) in b.indices.iter().enumerate() {
                    for (c, &j) in b.indices.iter().enumerate() {
                        p[(i, j)] = tp.p[(r, c)];
                    }
                }
            }
            p
        }
        _ => return Err(Error::Unsupported("tangent spaces exist only for affine, sphere and product sets".into())),
    };
    let sym = (&p + p.transpose()) * 0.5;
    TangentProjector::new(sym)
}

#[derive(Debug, Clone, Serialize)]
pub struct PrincipalAngles {
    /// Transverse angles in radians, ascending.
    pub transverse: Vec<f64>,
    pub intersection_dim: usize,
    pub dim_a: usize,
    pub dim_b: usize,
}

impl PrincipalAngles {
    pub fn sum_dim(&self) -> usize {
        self.dim_a + self.dim_b - self.intersection_dim
    }
}

struct Decomposition {
    angles: PrincipalAngles,
    /// `(e1, e2, θ)` with `e1 ∈ T_A` and `e2` completing the principal plane.
    planes: Vec<(Point, Point, f64)>,
    intersection: Vec<Point>,
    unpaired: Vec<Point>,
}

fn decompose(pa: &TangentProjector, pb: &TangentProjector) -> Result<Decomposition> {
    if pa.dim() != pb.dim() {
        return Err(Error::DimensionMismatch { expected: pa.dim(), got: pb.dim() });
    }
    let (qa, qb) = (pa.basis(), pb.basis());
    let (ka, kb) = (qa.ncols(), qb.ncols());
    let mut planes = Vec::new();
    let mut intersection = Vec::new();
    let mut transverse = Vec::new();
    if ka > 0 && kb > 0 {
        let svd = (qa.transpose() * &qb).svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        for k in 0..svd.singular_values.len() {
            let c = svd.singular_values[k].clamp(0.0, 1.0);
            let theta = c.acos();
            let a = &qa * u.column(k);
            if theta < TRANSVERSE_ANGLE_MIN {
                intersection.push(a);
                continue;
            }
            let b = &qb * vt.row(k).transpose();
            let w = (&b - &a * c) / theta.sin();
            transverse.push(theta);
            planes.push((a, w.normalize(), theta));
        }
    }
    let mut basis: Vec<Point> = intersection.clone();
    for (a, w, _) in &planes {
        basis.push(a.clone());
        basis.push(w.clone());
    }
    let mut unpaired = Vec::new();
    for col in qa.column_iter().chain(qb.column_iter()) {
        let mut r: Point = col.into_owned();
        for e in basis.iter().chain(&unpaired) {
            r -= e * e.dot(&r);
        }
        if r.norm() > 1e-8 {
            unpaired.push(r.normalize());
        }
    }
    transverse.sort_by(f64::total_cmp);
    planes.sort_by(|x, y| x.2.total_cmp(&y.2));
    Ok(Decomposition {
        angles: PrincipalAngles { transverse, intersection_dim: intersection.len(), dim_a: ka, dim_b: kb },
        planes,
        intersection,
        unpaired,
    })
}

pub fn principal_angles(pa: &TangentProjector, pb: &TangentProjector) -> Result<PrincipalAngles> {
    Ok(decompose(pa, pb)?.angles)
}

/// Complex number as `(re, im)`.
pub type Complex = (f64, f64);

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub angles: PrincipalAngles,
    pub jacobian: DMatrix<f64>,
    pub eigenvalues: Vec<Complex>,
    pub symmetric_eigenvalues: Vec<f64>,
    /// `min sin²θ` over transverse angles; absent when there are none.
    pub sigma: Option<f64>,
    /// Largest distance from a predicted plane eigenvalue `−sin²θ ± i sinθ cosθ` to the computed spectrum.
    pub spectrum_deviation: f64,
    /// Largest deviation of the plane-restricted symmetric part from `−sin²θ·I`.
    pub symmetric_deviation: f64,
    /// Largest `‖J e‖` over intersection directions.
    pub intersection_residual: f64,
    #[serde(skip)]
    planes: Vec<(Point, Point, f64)>,
    #[serde(skip)]
    intersection: Vec<Point>,
    #[serde(skip)]
    unpaired: Vec<Point>,
}

impl SpectralReport {
    pub fn checks_pass(&self, tol: f64) -> bool {
        self.spectrum_deviation <= tol && self.symmetric_deviation <= tol && self.intersection_residual <= tol
    }

    pub fn intersection_basis(&self) -> &[Point] {
        &self.intersection
    }
}

/// `J = 2 p_B p_A − p_B − p_A` and its spectral bookkeeping.
pub fn jacobian_at_feasible(pa: &TangentProjector, pb: &TangentProjector) -> Result<SpectralReport> {
    let dec = decompose(pa, pb)?;
    let (a, b) = (pa.matrix(), pb.matrix());
    let j = b * a * 2.0 - b - a;
    let eig = j.complex_eigenvalues();
    let eigenvalues: Vec<Complex> = eig.iter().map(|z| (z.re, z.im)).collect();
    let sym = (&j + j.transpose()) * 0.5;
    let mut symmetric_eigenvalues: Vec<f64> = sym.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    symmetric_eigenvalues.sort_by(f64::total_cmp);

    let mut spectrum_deviation: f64 = 0.0;
    let mut symmetric_deviation: f64 = 0.0;
    let mut used = vec![false; eigenvalues.len()];
    for (e1, e2, theta) in &dec.planes {
        let (s, c) = theta.sin_cos();
        for sign in [1.0, -1.0] {
            let target = (-s * s, sign * s * c);
            let best = eigenvalues
                .iter()
                .enumerate()
                .filter(|(k, _)| !used[*k])
                .map(|(k, z)| (k, (z.0 - target.0).hypot(z.1 - target.1)))
                .min_by(|x, y| x.1.total_cmp(&y.1));
            match best {
                Some((k, d)) => {
                    used[k] = true;
                    spectrum_deviation = spectrum_deviation.max(d);
                }
                None => spectrum_deviation = f64::INFINITY,
            }
        }
        let basis = DMatrix::from_columns(&[e1.clone(), e2.clone()]);
        let restricted = basis.transpose() * &sym * &basis;
        let expected = DMatrix::<f64>::identity(2, 2) * (-s * s);
        symmetric_deviation = symmetric_deviation.max((restricted - expected).amax());
    }
    let intersection_residual = dec.intersection.iter().map(|e| (&j * e).norm()).fold(0.0, f64::max);
    let sigma = dec.angles.transverse.iter().map(|t| t.sin().powi(2)).reduce(f64::min);
    Ok(SpectralReport {
        angles: dec.angles,
        jacobian: j,
        eigenvalues,
        symmetric_eigenvalues,
        sigma,
        spectrum_deviation,
        symmetric_deviation,
        intersection_residual,
        planes: dec.planes,
        intersection: dec.intersection,
        unpaired: dec.unpaired,
    })
}

/// Spectral report at a feasible point of a smooth two-set instance.
pub fn spectral_report(p: &FlowProblem, x_star: &Point) -> Result<SpectralReport> {
    jacobian_at_feasible(&tangent_projector(p.a(), x_star)?, &tangent_projector(p.b(), x_star)?)
}

/// Central-difference Jacobian of the flow field. One-sided differences are
/// compared to detect a jump in the projections near `x`.
pub fn finite_difference_jacobian(p: &FlowProblem, x: &Point, h: f64) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let m = x.len();
    let v0 = p.flow_field(x)?;
    let mut jac = DMatrix::zeros(m, m);
    for k in 0..m {
        let mut xp = x.clone();
        xp[k] += h;
        let mut xm = x.clone();
        xm[k] -= h;
        let (vp, vm) = (p.flow_field(&xp)?, p.flow_field(&xm)?);
        let fwd = (&vp - &v0) / h;
        let bwd = (&v0 - &vm) / h;
        let col = (&vp - &vm) / (2.0 * h);
        let asym = (&fwd - &bwd).amax();
        if asym > 1e-3 * col.amax().max(1.0) {
            return Err(Error::Multivalued(asym));
        }
        jac.set_column(k, &col);
    }
    Ok(jac)
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovCertificate {
    pub h: DMatrix<f64>,
    pub gamma: f64,
    pub kernel: Vec<Point>,
    /// Largest eigenvalue of `HJ + JᵀH + 2γH`; at most `1e-10` when valid.
    pub residual: f64,
}

impl LyapunovCertificate {
    pub fn value(&self, x: &Point, x_star: &Point) -> f64 {
        let y = x - x_star;
        y.dot(&(&self.h * &y))
    }
}

/// Blockwise certificate: `H = I` on each principal plane and on unpaired
/// directions, zero on the intersection, `γ = min sin²θ`.
pub fn solve_transverse_lyapunov(report: &SpectralReport) -> Result<LyapunovCertificate> {
    let m = report.jacobian.nrows();
    let sum = report.angles.sum_dim();
    if sum < m {
        return Err(Error::NotTransversal(format!("tangent spaces span {sum} of {m} dimensions")));
    }
    let mut h = DMatrix::zeros(m, m);
    let mut gamma = f64::INFINITY;
    for (e1, e2, theta) in &report.planes {
        h += e1 * e1.transpose() + e2 * e2.transpose();
        gamma = gamma.min(theta.sin().powi(2));
    }
    for u in &report.unpaired {
        h += u * u.transpose();
        gamma = gamma.min(1.0);
    }
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::NotTransversal("no transverse directions".into()));
    }
    let j = &report.jacobian;
    let lhs = &h * j + j.transpose() * &h + &h * (2.0 * gamma);
    let lhs = (&lhs + lhs.transpose()) * 0.5;
    let residual = lhs.symmetric_eigen().eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if residual > 1e-10 {
        return Err(Error::NotTransversal(format!("certificate inequality fails by {residual:.2e}")));
    }
    Ok(LyapunovCertificate { h, gamma, kernel: report.intersection.clone(), residual })
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscreteLyapunovReport {
    pub steps: usize,
    pub violations: usize,
    /// Largest `V_{k+1} − (1 − cε) V_k`; nonpositive when every step holds.
    pub worst_margin: f64,
    /// `V_k <= e^{−c k ε} V_0` at every step.
    pub envelope_holds: bool,
}

pub fn verify_discrete_lyapunov(
    iterates: &[Point],
    cert: &LyapunovCertificate,
    x_star: &Point,
    eps: f64,
    c: f64,
) -> DiscreteLyapunovReport {
    let vals: Vec<f64> = iterates.iter().map(|x| cert.value(x, x_star)).collect();
    let mut violations = 0;
    let mut worst_margin = f64::NEG_INFINITY;
    for w in vals.windows(2) {
        let margin = w[1] - (1.0 - c * eps) * w[0];
        let slack = 1e-14 * w[0].abs();
        if margin > slack {
            violations += 1;
        }
        worst_margin = worst_margin.max(margin);
    }
    let v0 = vals.first().copied().unwrap_or(0.0);
    let envelope_holds = vals
        .iter()
        .enumerate()
        .all(|(k, &v)| v <= (-c * k as f64 * eps).exp() * v0 * (1.0 + 1e-12) + 1e-300);
    DiscreteLyapunovReport { steps: vals.len().saturating_sub(1), violations, worst_margin, envelope_holds }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TubeSpec {
    pub radius: f64,
    pub theta0: f64,
}

impl TubeSpec {
    pub fn new(radius: f64, theta0: f64) -> Result<Self> {
        if !(radius > 0.0) || !(theta0 > 0.0) {
            return Err(Error::InvalidArgument("tube radius and angle must be positive".into()));
        }
        Ok(Self { radius, theta0 })
    }

    pub fn sigma(&self) -> f64 {
        0.5 * self.theta0.sin().powi(2)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TubeReport {
    pub checked: usize,
    pub excluded: usize,
    pub violations: usize,
    /// Largest `dE/dt + σ g²` relative to `g²` among checked samples.
    pub worst_margin: f64,
    pub no_revisit: bool,
}

/// Checks `dE/dt <= −σ g²` with `E = g²/2` by centered differences at the
/// samples inside the tube, and that `E` never climbs back above a level it left.
pub fn verify_tube_decay(p: &FlowProblem, tube: &TubeSpec, traj: &Trajectory) -> Result<TubeReport> {
    let sigma = tube.sigma();
    let e: Vec<f64> = traj.gaps.iter().map(|g| 0.5 * g * g).collect();
    let mut report = TubeReport { checked: 0, excluded: 0, violations: 0, worst_margin: f64::NEG_INFINITY, no_revisit: true };
    for k in 1..traj.points.len().saturating_sub(1) {
        let x = &traj.points[k];
        let pa = p.a().project(x)?;
        let ra = crate::sets::reflect_through(&pa, x);
        let inside = (x - &pa).norm() <= tube.radius && p.b().distance(&ra)? <= tube.radius;
        if !inside {
            report.excluded += 1;
            continue;
        }
        let g2 = traj.gaps[k].powi(2);
        if g2 == 0.0 {
            report.checked += 1;
            continue;
        }
        let de = (e[k + 1] - e[k - 1]) / (traj.times[k + 1] - traj.times[k - 1]);
        let margin = de + sigma * g2;
        report.checked += 1;
        if margin > 1e-4 * g2 {
            report.violations += 1;
        }
        report.worst_margin = report.worst_margin.max(margin / g2);
    }
    let mut low = f64::INFINITY;
    for &v in &e {
        if v > low * (1.0 + 1e-12) + 1e-300 {
            report.no_revisit = false;
        }
        low = low.min(v);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use nalgebra::dvector;
    use std::f64::consts::FRAC_PI_4;

    fn projectors(p: &FlowProblem, x: &Point) -> (TangentProjector, TangentProjector) {
        (tangent_projector(p.a(), x).unwrap(), tangent_projector(p.b(), x).unwrap())
    }

    #[test]
    fn tangent_projector_examples() {
        let o = dvector![0.0, 0.0];
        let p = catalog::orthogonal_lines();
        assert_eq!(tangent_projector(p.a(), &o).unwrap().matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));

        let s = SetOracle::sphere(o.clone(), 1.0).unwrap();
        let t = tangent_projector(&s, &dvector![1.0, 0.0]).unwrap();
        assert_eq!(t.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));

        let l = catalog::lines_at_angle(60f64.to_radians());
        let t = tangent_projector(l.b(), &o).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.25, 0.4330127018922193, 0.4330127018922193, 0.75]);
        assert!((t.matrix() - expect).amax() < 1e-12);

        let f = catalog::trap_1d();
        assert!(matches!(tangent_projector(f.a(), &dvector![0.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn principal_angle_examples() {
        let o = dvector![0.0, 0.0];
        let (a, b) = projectors(&catalog::lines_at_angle(60f64.to_radians()), &o);
        let ang = principal_angles(&a, &b).unwrap();
        assert!((ang.transverse[0] - 60f64.to_radians()).abs() < 1e-12);
        let ang = principal_angles(&a, &a).unwrap();
        assert!(ang.transverse.is_empty() && ang.intersection_dim == 1);
        let (a, b) = projectors(&catalog::orthogonal_lines(), &o);
        assert!((principal_angles(&a, &b).unwrap().transverse[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn jacobian_examples() {
        let o = dvector![0.0, 0.0];
        let r = spectral_report(&catalog::orthogonal_lines(), &o).unwrap();
        assert!((&r.jacobian + DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
        assert!(r.checks_pass(1e-8));

        let r = spectral_report(&catalog::lines_at_angle(FRAC_PI_4), &o).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[-0.5, -0.5, 0.5, -0.5]);
        assert!((&r.jacobian - expect).amax() < 1e-12);
        assert!(r.checks_pass(1e-8));
        assert!((r.sigma.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_blockwise() {
        let o = dvector![0.0, 0.0];
        let c = solve_transverse_lyapunov(&spectral_report(&catalog::orthogonal_lines(), &o).unwrap()).unwrap();
        assert!((&c.h - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12 && (c.gamma - 1.0).abs() < 1e-12);
        let c = solve_transverse_lyapunov(&spectral_report(&catalog::lines_at_angle(FRAC_PI_4), &o).unwrap()).unwrap();
        assert!((c.gamma - 0.5).abs() < 1e-12);

        let p = catalog::planes_with_common_axis(60f64.to_radians());
        let c = solve_transverse_lyapunov(&spectral_report(&p, &dvector![0.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(c.kernel.len(), 1);
        assert!((c.kernel[0][2].abs() - 1.0).abs() < 1e-12);
        assert!((&c.h * dvector![0.0, 0.0, 1.0]).norm() < 1e-12);

        let p = catalog::planes_at_angle_r4(30f64.to_radians());
        let r = spectral_report(&p, &Point::zeros(4)).unwrap();
        assert!(matches!(solve_transverse_lyapunov(&r), Err(Error::NotTransversal(_))));
    }

    #[test]
    fn finite_difference_matches_analytic() {
        let o = dvector![0.0, 0.0];
        for p in [catalog::orthogonal_lines(), catalog::lines_at_angle(FRAC_PI_4)] {
            let fd = finite_difference_jacobian(&p, &o, 1e-5).unwrap();
            assert!((fd - spectral_report(&p, &o).unwrap().jacobian).amax() < 1e-6);
        }
        let fd = finite_difference_jacobian(&catalog::trap_1d(), &dvector![-3.0], 1e-5).unwrap();
        assert_eq!(fd[(0, 0)], 0.0);
        let x = dvector![0.8, 0.6];
        let p = catalog::circle_and_line();
        let fd = finite_difference_jacobian(&p, &x, 1e-5).unwrap();
        assert!((fd - spectral_report(&p, &x).unwrap().jacobian).amax() < 1e-5);
        assert!(matches!(finite_difference_jacobian(&catalog::trap_1d(), &dvector![1.0], 1e-5), Err(Error::Multivalued(_))));
    }
}
