//! Projection onto the bilinear relation block `{(u, s) : u·s = y}`, with
//! optional nonnegativity `u, s >= 0`.
//!
//! Stationary points of `½‖u-u0‖² + ½‖s-s0‖²` on the quadric satisfy
//! `u = (u0 + λ s0)/(1-λ²)`, `s = (s0 + λ u0)/(1-λ²)`. In the rotated
//! coordinates `p = (u+s)/√2`, `q = (u-s)/√2` this reads `p = p0/(1-λ)`,
//! `q = q0/(1+λ)` and the constraint becomes
//! `‖p0‖²/(1-λ)² - ‖q0‖²/(1+λ)² = 2y`, strictly increasing on `(-1, 1)`.
//! The global minimizer of the equality-only problem is the unique root in
//! `(-1, 1)`, or a point of the degenerate family at `λ = ±1` when `p0` or
//! `q0` vanishes.

use super::poly;

/// Tuning for [`project_bilinear`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearConfig {
    /// Accepted `|u·s - y|`, scaled by `max(1, |y|)`.
    pub residual_tol: f64,
    /// Largest factor dimension for which nonnegative projections are solved by
    /// exhaustive active-pattern enumeration.
    pub exact_rank_limit: usize,
    /// Clamp-then-resolve rounds used above `exact_rank_limit`.
    pub clamp_rounds: usize,
}

impl Default for BilinearConfig {
    fn default() -> Self {
        Self {
            residual_tol: super::BILINEAR_RESIDUAL_TOL,
            exact_rank_limit: 2,
            clamp_rounds: 8,
        }
    }
}

/// Result of a bilinear projection. `exact` is false when the nonnegative
/// case was resolved by the clamp heuristic rather than enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearProjection {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub exact: bool,
}

impl BilinearProjection {
    pub fn distance_sq(&self, u0: &[f64], s0: &[f64]) -> f64 {
        dist_sq(&self.u, &self.s, u0, s0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BilinearError {
    Infeasible(f64),
    Root(String),
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

fn dist_sq(u: &[f64], s: &[f64], u0: &[f64], s0: &[f64]) -> f64 {
    u.iter().zip(u0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        + s.iter().zip(s0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

fn from_pq(p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let u = p.iter().zip(q).map(|(a, b)| (a + b) / SQRT_2).collect();
    let s = p.iter().zip(q).map(|(a, b)| (a - b) / SQRT_2).collect();
    (u, s)
}

fn to_pq(u0: &[f64], s0: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = u0.iter().zip(s0).map(|(a, b)| (a + b) / SQRT_2).collect();
    let q = u0.iter().zip(s0).map(|(a, b)| (a - b) / SQRT_2).collect();
    (p, q)
}

fn from_multiplier(u0: &[f64], s0: &[f64], lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let (p0, q0) = to_pq(u0, s0);
    let p: Vec<f64> = p0.iter().map(|a| a / (1.0 - lambda)).collect();
    let q: Vec<f64> = q0.iter().map(|a| a / (1.0 + lambda)).collect();
    from_pq(&p, &q)
}

fn unit(n: usize, scale: f64) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[0] = scale;
    e
}

/// Root of `P/(1-λ)² - Q/(1+λ)² - 2y` on `(-1, 1)`, with `P, Q > 0` or the
/// appropriate one-sided range already checked by the caller.
fn interior_multiplier(pp: f64, qq: f64, y: f64) -> Result<f64, BilinearError> {
    let phi = |l: f64| pp / ((1.0 - l) * (1.0 - l)) - qq / ((1.0 + l) * (1.0 + l)) - 2.0 * y;
    let dphi = |l: f64| 2.0 * pp / (1.0 - l).powi(3) + 2.0 * qq / (1.0 + l).powi(3);
    let scale = pp + qq + 2.0 * y.abs();
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    let mut l = 0.0_f64;
    for _ in 0..300 {
        let f = phi(l);
        if !f.is_finite() {
            return Err(BilinearError::Root(format!("non-finite secular value at λ = {l}")));
        }
        if f.abs() <= 1e-15 * scale {
            return Ok(l);
        }
        if f > 0.0 {
            hi = l;
        } else {
            lo = l;
        }
        if hi - lo <= 4.0 * f64::EPSILON {
            return Ok(l);
        }
        let step = l - f / dphi(l);
        l = if step > lo && step < hi && step.is_finite() {
            step
        } else {
            0.5 * (lo + hi)
        };
    }
    let f = phi(l);
    if f.abs() <= 1e-9 * scale.max(1.0) {
        Ok(l)
    } else {
        Err(BilinearError::Root(format!(
            "secular equation did not converge (λ = {l}, residual {f:.3e})"
        )))
    }
}

/// Nearest point of `{u·s = y}` to `(u0, s0)` without sign constraints.
pub fn project_equality(u0: &[f64], s0: &[f64], y: f64) -> Result<(Vec<f64>, Vec<f64>), BilinearError> {
    let r = u0.len();
    let (p0, q0) = to_pq(u0, s0);
    let (pp, qq) = (norm_sq(&p0), norm_sq(&q0));
    if pp == 0.0 && qq == 0.0 {
        let (p, q) = if y > 0.0 {
            (unit(r, (2.0 * y).sqrt()), vec![0.0; r])
        } else if y < 0.0 {
            (vec![0.0; r], unit(r, (-2.0 * y).sqrt()))
        } else {
            (vec![0.0; r], vec![0.0; r])
        };
        return Ok(from_pq(&p, &q));
    }
    if pp == 0.0 && 2.0 * y >= -qq / 4.0 {
        let q: Vec<f64> = q0.iter().map(|a| a / 2.0).collect();
        let p = unit(r, (2.0 * y + qq / 4.0).sqrt());
        return Ok(from_pq(&p, &q));
    }
    if qq == 0.0 && 2.0 * y <= pp / 4.0 {
        let p: Vec<f64> = p0.iter().map(|a| a / 2.0).collect();
        let q = unit(r, (pp / 4.0 - 2.0 * y).max(0.0).sqrt());
        return Ok(from_pq(&p, &q));
    }
    let lambda = interior_multiplier(pp, qq, y)?;
    Ok(correct(from_multiplier(u0, s0, lambda), y))
}

/// Gauss-Newton steps along the constraint gradient `(s, u)`. Multipliers
/// near `|λ| = 1` lose digits that the division in [`from_multiplier`] amplifies.
fn correct((mut u, mut s): (Vec<f64>, Vec<f64>), y: f64) -> (Vec<f64>, Vec<f64>) {
    for _ in 0..4 {
        let r = dot(&u, &s) - y;
        let g = norm_sq(&u) + norm_sq(&s);
        if r.abs() <= 1e-15 * y.abs().max(1.0) || g == 0.0 {
            break;
        }
        let t = r / g;
        let (u1, s1): (Vec<f64>, Vec<f64>) = u.iter().zip(&s).map(|(a, b)| (a - t * b, b - t * a)).unzip();
        if (dot(&u1, &s1) - y).abs() >= r.abs() {
            break;
        }
        u = u1;
        s = s1;
    }
    (u, s)
}

/// Every stationary point of the equality-constrained problem (all real
/// multipliers, not only those in `(-1, 1)`), plus a representative of each
/// degenerate family chosen to respect `u, s >= 0` when possible.
fn stationary_points(u0: &[f64], s0: &[f64], y: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let r = u0.len();
    let c = dot(u0, s0);
    let q = norm_sq(u0) + norm_sq(s0);
    let mut out = Vec::new();
    // (u0+λs0)·(s0+λu0) = y (1-λ²)²
    let coeffs = [c - y, q, c + 2.0 * y, 0.0, -y];
    let (p0, q0) = to_pq(u0, s0);
    let (pp, qq) = (norm_sq(&p0), norm_sq(&q0));
    for lambda in poly::real_roots(&coeffs) {
        if (lambda.abs() - 1.0).abs() < 1e-12 {
            continue;
        }
        out.push(correct(from_multiplier(u0, s0, lambda), y));
    }
    if pp == 0.0 {
        // λ = 1: q = q0/2 fixed, ‖p‖² = 2y + ‖q‖²; nonnegativity needs p_j >= |q_j|.
        let qh: Vec<f64> = q0.iter().map(|a| a / 2.0).collect();
        let radius_sq = 2.0 * y + qq / 4.0;
        if radius_sq >= 0.0 {
            let mut p: Vec<f64> = qh.iter().map(|a| a.abs()).collect();
            let rest: f64 = p.iter().skip(1).map(|a| a * a).sum();
            if radius_sq >= rest {
                p[0] = (radius_sq - rest).sqrt();
            } else {
                p = unit(r, radius_sq.sqrt());
            }
            out.push(from_pq(&p, &qh));
        }
    }
    if qq == 0.0 {
        // λ = -1: p = p0/2 fixed, ‖q‖² = ‖p‖² - 2y; nonnegativity needs |q_j| <= p_j.
        let ph: Vec<f64> = p0.iter().map(|a| a / 2.0).collect();
        let radius_sq = pp / 4.0 - 2.0 * y;
        if radius_sq >= 0.0 {
            let mut rem = radius_sq;
            let mut qv = vec![0.0; r];
            for (qj, pj) in qv.iter_mut().zip(&ph) {
                let take = pj.max(0.0).min(rem.max(0.0).sqrt());
                *qj = take;
                rem -= take * take;
            }
            if rem > 1e-14 * radius_sq.max(1.0) {
                qv = unit(r, radius_sq.sqrt());
            }
            out.push(from_pq(&ph, &qv));
        }
    }
    if q == 0.0 && y == 0.0 {
        out.push((vec![0.0; r], vec![0.0; r]));
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Slot {
    Free,
    UZero,
    SZero,
}

fn cheaper_zero(u0: f64, s0: f64) -> Slot {
    let cost_u = u0 * u0 + s0.min(0.0).powi(2);
    let cost_s = s0 * s0 + u0.min(0.0).powi(2);
    if cost_u < cost_s {
        Slot::UZero
    } else {
        Slot::SZero
    }
}

struct Candidate {
    u: Vec<f64>,
    s: Vec<f64>,
    dist: f64,
}

/// Assemble a full candidate from a slot pattern and a solution on the free
/// coordinates. Returns `None` when the free solution violates `>= 0`.
fn assemble(
    u0: &[f64],
    s0: &[f64],
    slots: &[Slot],
    free: &[usize],
    uf: &[f64],
    sf: &[f64],
) -> Option<Candidate> {
    let r = u0.len();
    let mut u = vec![0.0; r];
    let mut s = vec![0.0; r];
    for j in 0..r {
        match slots[j] {
            Slot::UZero => s[j] = s0[j].max(0.0),
            Slot::SZero => u[j] = u0[j].max(0.0),
            Slot::Free => {}
        }
    }
    for (k, &j) in free.iter().enumerate() {
        if uf[k] < -1e-12 || sf[k] < -1e-12 {
            return None;
        }
        u[j] = uf[k].max(0.0);
        s[j] = sf[k].max(0.0);
    }
    let dist = dist_sq(&u, &s, u0, s0);
    Some(Candidate { u, s, dist })
}

fn best_for_pattern(u0: &[f64], s0: &[f64], y: f64, slots: &[Slot], tol: f64) -> Option<Candidate> {
    let free: Vec<usize> = (0..u0.len()).filter(|&j| slots[j] == Slot::Free).collect();
    if free.is_empty() {
        return if y.abs() <= tol {
            assemble(u0, s0, slots, &free, &[], &[])
        } else {
            None
        };
    }
    let uf: Vec<f64> = free.iter().map(|&j| u0[j]).collect();
    let sf: Vec<f64> = free.iter().map(|&j| s0[j]).collect();
    let mut best: Option<Candidate> = None;
    for (cu, cs) in stationary_points(&uf, &sf, y) {
        if (dot(&cu, &cs) - y).abs() > tol {
            continue;
        }
        if let Some(c) = assemble(u0, s0, slots, &free, &cu, &cs) {
            if best.as_ref().is_none_or(|b| c.dist < b.dist) {
                best = Some(c);
            }
        }
    }
    best
}

fn enumerate_patterns(u0: &[f64], s0: &[f64], y: f64, tol: f64) -> Option<Candidate> {
    let r = u0.len();
    let total = 3usize.pow(r as u32);
    let mut best: Option<Candidate> = None;
    let mut slots = vec![Slot::Free; r];
    for code in 0..total {
        let mut c = code;
        for slot in slots.iter_mut() {
            *slot = match c % 3 {
                0 => Slot::Free,
                1 => Slot::UZero,
                _ => Slot::SZero,
            };
            c /= 3;
        }
        if let Some(cand) = best_for_pattern(u0, s0, y, &slots, tol) {
            if best.as_ref().is_none_or(|b| cand.dist < b.dist - 1e-15) {
                best = Some(cand);
            }
        }
    }
    best
}

fn clamp_resolve(u0: &[f64], s0: &[f64], y: f64, rounds: usize, tol: f64) -> Option<Candidate> {
    let r = u0.len();
    let mut slots = vec![Slot::Free; r];
    for _ in 0..rounds {
        let free: Vec<usize> = (0..r).filter(|&j| slots[j] == Slot::Free).collect();
        if free.is_empty() {
            break;
        }
        let uf: Vec<f64> = free.iter().map(|&j| u0[j]).collect();
        let sf: Vec<f64> = free.iter().map(|&j| s0[j]).collect();
        let (cu, cs) = project_equality(&uf, &sf, y).ok()?;
        let negative: Vec<usize> = free
            .iter()
            .enumerate()
            .filter(|(k, _)| cu[*k] < 0.0 || cs[*k] < 0.0)
            .map(|(_, &j)| j)
            .collect();
        if negative.is_empty() {
            if (dot(&cu, &cs) - y).abs() <= tol {
                return assemble(u0, s0, &slots, &free, &cu, &cs);
            }
            return None;
        }
        if negative.len() == free.len() {
            // Keep the coordinate with the largest positive mass free.
            let keep = *free
                .iter()
                .max_by(|&&a, &&b| (u0[a] + s0[a]).total_cmp(&(u0[b] + s0[b])))
                .expect("free is nonempty");
            for &j in &negative {
                if j != keep {
                    slots[j] = cheaper_zero(u0[j], s0[j]);
                }
            }
            return best_for_pattern(u0, s0, y, &slots, tol);
        }
        for &j in &negative {
            slots[j] = cheaper_zero(u0[j], s0[j]);
        }
    }
    None
}

fn single_coordinate_fallback(u0: &[f64], s0: &[f64], y: f64, tol: f64) -> Option<Candidate> {
    let r = u0.len();
    let mut best: Option<Candidate> = None;
    for keep in 0..r {
        let slots: Vec<Slot> = (0..r)
            .map(|j| if j == keep { Slot::Free } else { cheaper_zero(u0[j], s0[j]) })
            .collect();
        if let Some(c) = best_for_pattern(u0, s0, y, &slots, tol) {
            if best.as_ref().is_none_or(|b| c.dist < b.dist) {
                best = Some(c);
            }
        }
    }
    best
}

/// Project `(u0, s0)` onto `{(u, s) : u·s = y}` (and `u, s >= 0` if `nonneg`).
pub fn project_bilinear(
    u0: &[f64],
    s0: &[f64],
    y: f64,
    nonneg: bool,
    cfg: &BilinearConfig,
) -> Result<BilinearProjection, BilinearError> {
    assert_eq!(u0.len(), s0.len(), "factor dimensions must agree");
    assert!(!u0.is_empty(), "factor dimension must be at least 1");
    let tol = cfg.residual_tol * y.abs().max(1.0);
    if nonneg && y < 0.0 {
        return Err(BilinearError::Infeasible(y));
    }
    if dot(u0, s0) == y && (!nonneg || u0.iter().chain(s0).all(|&a| a >= 0.0)) {
        return Ok(BilinearProjection { u: u0.to_vec(), s: s0.to_vec(), exact: true });
    }

    let (u, s) = project_equality(u0, s0, y)?;
    if !nonneg || u.iter().chain(&s).all(|&a| a >= 0.0) {
        let residual = (dot(&u, &s) - y).abs();
        if residual > tol {
            return Err(BilinearError::Root(format!("residual {residual:.3e} exceeds tolerance")));
        }
        return Ok(BilinearProjection { u, s, exact: true });
    }

    if y == 0.0 {
        // Complementarity: every product u_j s_j must vanish independently.
        let slots: Vec<Slot> = u0.iter().zip(s0).map(|(&a, &b)| cheaper_zero(a, b)).collect();
        let c = assemble(u0, s0, &slots, &[], &[], &[]).expect("no free coordinates");
        return Ok(BilinearProjection { u: c.u, s: c.s, exact: true });
    }

    let r = u0.len();
    let (cand, exact) = if r <= cfg.exact_rank_limit {
        (enumerate_patterns(u0, s0, y, tol), true)
    } else {
        let c = clamp_resolve(u0, s0, y, cfg.clamp_rounds, tol)
            .or_else(|| single_coordinate_fallback(u0, s0, y, tol));
        (c, false)
    };
    match cand {
        Some(c) => Ok(BilinearProjection { u: c.u, s: c.s, exact }),
        None => Err(BilinearError::Root(
            "no nonnegative stationary point found".to_string(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> BilinearConfig {
        BilinearConfig::default()
    }

    #[test]
    fn feasible_point_is_fixed() {
        let p = project_bilinear(&[1.0], &[1.0], 1.0, false, &cfg()).unwrap();
        assert_eq!(p.u, vec![1.0]);
        assert_eq!(p.s, vec![1.0]);
    }

    #[test]
    fn zero_target_tie_zeroes_second_factor() {
        let p = project_bilinear(&[1.0], &[1.0], 0.0, false, &cfg()).unwrap();
        assert!((p.u[0] - 1.0).abs() < 1e-12);
        assert!(p.s[0].abs() < 1e-12);
        let p = project_bilinear(&[1.0], &[1.0], 0.0, true, &cfg()).unwrap();
        assert!((p.u[0] - 1.0).abs() < 1e-12 && p.s[0].abs() < 1e-12);
    }

    #[test]
    fn negative_target_with_nonneg_is_infeasible() {
        assert_eq!(
            project_bilinear(&[1.0], &[1.0], -0.5, true, &cfg()),
            Err(BilinearError::Infeasible(-0.5))
        );
    }

    #[test]
    fn origin_projects_onto_diagonal() {
        let p = project_bilinear(&[0.0, 0.0], &[0.0, 0.0], 4.0, false, &cfg()).unwrap();
        assert!((dot(&p.u, &p.s) - 4.0).abs() < 1e-12);
        assert!((p.u[0] - 2.0).abs() < 1e-12 && (p.s[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn negative_branch_start_moves_to_positive_branch_under_nonneg() {
        let p = project_bilinear(&[-1.0], &[-1.0], 1.0, true, &cfg()).unwrap();
        assert!((p.u[0] - 1.0).abs() < 1e-9 && (p.s[0] - 1.0).abs() < 1e-9);
        assert!(p.exact);
    }

    #[test]
    fn high_rank_nonneg_is_flagged_inexact_when_clamping() {
        let u0 = [1.0, -2.0, 0.5];
        let s0 = [-1.0, 1.5, 0.5];
        let p = project_bilinear(&u0, &s0, 0.7, true, &cfg()).unwrap();
        assert!(!p.exact);
        assert!(p.u.iter().chain(&p.s).all(|&a| a >= 0.0));
        assert!((dot(&p.u, &p.s) - 0.7).abs() < 1e-8);
    }
}
