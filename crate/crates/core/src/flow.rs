//! The RRR flow field, the discrete iteration, reference integrators, and
//! hitting-time studies.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sets::{Point, ProjectionStats, SetOracle, Tolerances};
use crate::wdomains::{CellId, CellPartition};

#[derive(Debug, Clone)]
pub struct FlowProblem {
    a: SetOracle,
    b: SetOracle,
    tol: Tolerances,
}

impl FlowProblem {
    pub fn new(a: SetOracle, b: SetOracle) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
        }
        Ok(Self { a, b, tol: Tolerances::default() })
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn a(&self) -> &SetOracle {
        &self.a
    }

    pub fn b(&self) -> &SetOracle {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn is_piecewise(&self) -> bool {
        self.a.is_finite_set() && self.b.is_finite_set()
    }

    /// `v(x) = P_B(2 P_A x − x) − P_A x`.
    pub fn flow_field(&self, x: &Point) -> Result<Point> {
        self.flow_field_with_stats(x, &mut ProjectionStats::default())
    }

    pub fn flow_field_with_stats(&self, x: &Point, stats: &mut ProjectionStats) -> Result<Point> {
        let pa = self.a.project_with(x, &self.tol, stats)?;
        let ra = crate::sets::reflect_through(&pa, x);
        let pb = self.b.project_with(&ra, &self.tol, stats)?;
        Ok(pb - pa)
    }

    pub fn gap(&self, x: &Point) -> Result<f64> {
        Ok(self.flow_field(x)?.norm())
    }

    pub fn rrr_step(&self, x: &Point, eps: f64) -> Result<Point> {
        check_eps(eps)?;
        Ok(x + self.flow_field(x)? * eps)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step must lie in (0, 1], got {eps}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentLabel {
    /// Reference solution of a smooth instance.
    Smooth,
    /// Linear interpolation between RRR iterates.
    Euler,
    Interior { cell: CellId },
    Sliding { first: CellId, second: CellId },
    Equilibrium { solution: bool },
}

impl std::fmt::Display for SegmentLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SegmentLabel::Smooth => write!(f, "smooth"),
            SegmentLabel::Euler => write!(f, "euler"),
            SegmentLabel::Interior { cell } => write!(f, "interior{cell}"),
            SegmentLabel::Sliding { first, second } => write!(f, "sliding{first}{second}"),
            SegmentLabel::Equilibrium { solution: true } => write!(f, "equilibrium(solution)"),
            SegmentLabel::Equilibrium { solution: false } => write!(f, "equilibrium(non-solution)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    InterfaceCross,
    SlidingEntry,
    SlidingExit,
    Capture,
    Junction,
    FilippovEquilibrium,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub cells: Vec<CellId>,
}

/// Piecewise-linear path. `labels[k]` and `gaps[k]` describe the segment from
/// `points[k]` to `points[k + 1]`; the last gap repeats the final segment's.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub gaps: Vec<f64>,
    pub labels: Vec<SegmentLabel>,
    pub events: Vec<Event>,
}

impl Trajectory {
    fn start(x0: Point, gap: f64) -> Self {
        Self { times: vec![0.0], points: vec![x0], gaps: vec![gap], labels: Vec::new(), events: Vec::new() }
    }

    fn push(&mut self, t: f64, x: Point, label: SegmentLabel, gap: f64) {
        let k = self.points.len() - 1;
        self.gaps[k] = gap;
        self.labels.push(label);
        self.times.push(t);
        self.points.push(x);
        self.gaps.push(gap);
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn endpoint(&self) -> &Point {
        self.points.last().unwrap()
    }

    /// Linear interpolation; clamps outside the time range.
    pub fn position_at(&self, t: f64) -> Point {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.points[0].clone();
        }
        if k >= self.times.len() {
            return self.endpoint().clone();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        &self.points[k - 1] * (1.0 - w) + &self.points[k] * w
    }

    pub fn times_strictly_increasing(&self) -> bool {
        self.times.windows(2).all(|w| w[1] > w[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    Smooth,
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Fixed RK4 step in smooth mode.
    pub fine_step: f64,
    /// Bisection tolerance on event times in piecewise mode.
    pub event_tol: f64,
    /// Distance within which a cell closure counts as touching the state.
    pub near_tol: f64,
    pub event_budget: usize,
    /// Censoring horizon for continuous hitting times.
    pub horizon: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { fine_step: 1e-3, event_tol: 1e-12, near_tol: 1e-9, event_budget: 10_000, horizon: 1e3 }
    }
}

impl IntegratorConfig {
    /// Fine step `min(1e-3, eps_min / 10)` for comparisons against Euler runs.
    pub fn for_eps(eps_min: f64) -> Self {
        Self { fine_step: (1e-3f64).min(eps_min / 10.0), ..Self::default() }
    }
}

pub fn integrate_flow(p: &FlowProblem, x0: &Point, t_end: f64, mode: FlowMode, cfg: &IntegratorConfig) -> Result<Trajectory> {
    if !(t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("integration time must be positive, got {t_end}")));
    }
    match mode {
        FlowMode::Smooth => integrate_smooth(p, x0, t_end, cfg),
        FlowMode::Piecewise => integrate_piecewise(p, x0, t_end, cfg),
    }
}

fn rk4(p: &FlowProblem, x: &Point, h: f64) -> Result<Point> {
    let k1 = p.flow_field(x)?;
    let k2 = p.flow_field(&(x + &k1 * (0.5 * h)))?;
    let k3 = p.flow_field(&(x + &k2 * (0.5 * h)))?;
    let k4 = p.flow_field(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

fn smooth_steps(t_end: f64, fine: f64) -> (usize, f64) {
    let n = (t_end / fine - 1e-9).ceil().max(1.0) as usize;
    (n, t_end / n as f64)
}

fn integrate_smooth(p: &FlowProblem, x0: &Point, t_end: f64, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let (n, h) = smooth_steps(t_end, cfg.fine_step);
    let mut traj = Trajectory::start(x0.clone(), p.gap(x0)?);
    let mut x = x0.clone();
    for k in 1..=n {
        x = rk4(p, &x, h)?;
        let g = p.gap(&x)?;
        let gk = traj.gaps[k - 1];
        traj.push(k as f64 * h, x.clone(), SegmentLabel::Smooth, g);
        traj.gaps[k - 1] = gk;
    }
    Ok(traj)
}

fn min_norm_on_segment(v1: &Point, v2: &Point) -> f64 {
    let d = v2 - v1;
    let dd = d.norm_squared();
    if dd == 0.0 {
        return v1.norm();
    }
    let t = (-v1.dot(&d) / dd).clamp(0.0, 1.0);
    (v1 + d * t).norm()
}

/// Largest `τ ∈ [0, tau_max]` with `f(τ) <= level`, assuming the sublevel set is an interval containing 0.
fn exit_time(f: impl Fn(f64) -> f64, tau_max: f64, level: f64, tol: f64) -> f64 {
    if f(tau_max) <= level {
        return tau_max;
    }
    let (mut lo, mut hi) = (0.0, tau_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Event-driven exact integration for finite sets: linear motion inside
/// cells, Filippov sliding on attracting two-cell interfaces.
pub fn integrate_piecewise(p: &FlowProblem, x0: &Point, t_end: f64, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let part = CellPartition::from_problem(p)?;
    if x0.len() != part.dim() {
        return Err(Error::DimensionMismatch { expected: part.dim(), got: x0.len() });
    }
    let member_tol = 1e-10;
    let mut traj = Trajectory::start(x0.clone(), p.gap(x0)?);
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut current: Option<SegmentLabel> = None;
    let mut steps = 0usize;

    while t < t_end {
        steps += 1;
        if steps > cfg.event_budget {
            return Err(Error::EventBudget { budget: cfg.event_budget, time: t, partial: Box::new(traj) });
        }
        let near = part.cells_near(x.as_slice(), cfg.near_tol);
        let near = if near.is_empty() { vec![part.cell_of(x.as_slice()).0] } else { near };

        if let Some(&sol) = near.iter().find(|&&c| part.is_solution(c)) {
            traj.events.push(Event { time: t, kind: EventKind::Capture, cells: vec![sol] });
            traj.push(t_end, x.clone(), SegmentLabel::Equilibrium { solution: true }, 0.0);
            break;
        }
        if near.len() >= 3 {
            traj.events.push(Event { time: t, kind: EventKind::Junction, cells: near });
            break;
        }

        let free: Vec<CellId> = near.iter().copied().filter(|&c| part.admits_motion(c, x.as_slice(), cfg.near_tol)).collect();
        let tau_max = t_end - t;

        if free.is_empty() && near.len() == 2 {
            let (i, j) = (near[0], near[1]);
            let iface = part.interface(i, j)?;
            if let Some(vs) = iface.sliding.clone() {
                let scale = iface.v1.norm().max(iface.v2.norm());
                if vs.norm() <= 1e-14 * scale {
                    traj.events.push(Event { time: t, kind: EventKind::FilippovEquilibrium, cells: vec![i, j] });
                    traj.push(t_end, x.clone(), SegmentLabel::Equilibrium { solution: false }, 0.0);
                    break;
                }
                let label = SegmentLabel::Sliding { first: i, second: j };
                if current != Some(label) {
                    traj.events.push(Event { time: t, kind: EventKind::SlidingEntry, cells: vec![i, j] });
                }
                let slack = |tau: f64| {
                    let y = &x + &vs * tau;
                    part.slack(i, y.as_slice()).max(part.slack(j, y.as_slice()))
                };
                let level = slack(0.0).max(0.0) + member_tol;
                let tau = exit_time(slack, tau_max, level, cfg.event_tol);
                let g = min_norm_on_segment(&iface.v1, &iface.v2);
                if tau > 0.0 {
                    x = &x + &vs * tau;
                    t += tau;
                    traj.push(t, x.clone(), label, g);
                }
                if t < t_end {
                    traj.events.push(Event { time: t, kind: EventKind::SlidingExit, cells: vec![i, j] });
                }
                current = Some(label);
                continue;
            }
        }

        let c = free.first().copied().unwrap_or(near[0]);
        let label = SegmentLabel::Interior { cell: c };
        if matches!(current, Some(SegmentLabel::Interior { .. })) && current != Some(label) {
            traj.events.push(Event { time: t, kind: EventKind::InterfaceCross, cells: near.clone() });
        }
        let v = part.velocity(c);
        let slack = |tau: f64| part.slack(c, (&x + &v * tau).as_slice());
        let level = slack(0.0).max(0.0) + member_tol;
        let tau = exit_time(slack, tau_max, level, cfg.event_tol);
        if tau > 0.0 {
            x = &x + &v * tau;
            t += tau;
            traj.push(t, x.clone(), label, v.norm());
        }
        current = Some(label);
    }
    Ok(traj)
}

/// Result of a discrete RRR run against a gap threshold.
#[derive(Debug, Clone, Serialize)]
pub struct RrrRun {
    pub eps: f64,
    pub delta: f64,
    /// First index with gap at most `delta`; absent when censored.
    pub k: Option<usize>,
    pub t_star: Option<f64>,
    pub censored: bool,
    pub trajectory: Trajectory,
}

pub fn run_rrr(p: &FlowProblem, x0: &Point, eps: f64, k_max: usize, delta: f64) -> Result<RrrRun> {
    check_eps(eps)?;
    if !(delta > 0.0) || k_max == 0 {
        return Err(Error::InvalidArgument("need delta > 0 and k_max >= 1".into()));
    }
    let mut x = x0.clone();
    let mut v = p.flow_field(&x)?;
    let mut traj = Trajectory::start(x.clone(), v.norm());
    let mut k = 0usize;
    loop {
        if v.norm() <= delta {
            return Ok(RrrRun { eps, delta, k: Some(k), t_star: Some(eps * k as f64), censored: false, trajectory: traj });
        }
        if k == k_max {
            return Ok(RrrRun { eps, delta, k: None, t_star: None, censored: true, trajectory: traj });
        }
        x += &v * eps;
        k += 1;
        v = p.flow_field(&x)?;
        let g = traj.gaps[k - 1];
        traj.push(eps * k as f64, x.clone(), SegmentLabel::Euler, v.norm());
        traj.gaps[k - 1] = g;
    }
}

/// Euler iterates up to flow time `t_end`, as a trajectory.
pub fn euler_trajectory(p: &FlowProblem, x0: &Point, eps: f64, t_end: f64) -> Result<Trajectory> {
    check_eps(eps)?;
    let n = (t_end / eps - 1e-9).ceil() as usize;
    let mut x = x0.clone();
    let mut v = p.flow_field(&x)?;
    let mut traj = Trajectory::start(x.clone(), v.norm());
    for k in 1..=n {
        x += &v * eps;
        v = p.flow_field(&x)?;
        let g = traj.gaps[k - 1];
        traj.push(eps * k as f64, x.clone(), SegmentLabel::Euler, v.norm());
        traj.gaps[k - 1] = g;
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HittingTime {
    /// `None` when the horizon was reached first.
    pub time: Option<f64>,
    pub censored: bool,
}

/// First flow time at which the gap falls to `delta`.
pub fn hitting_time_continuous(p: &FlowProblem, x0: &Point, delta: f64, cfg: &IntegratorConfig) -> Result<HittingTime> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    if p.gap(x0)? <= delta {
        return Ok(HittingTime { time: Some(0.0), censored: false });
    }
    if p.is_piecewise() {
        let traj = integrate_piecewise(p, x0, cfg.horizon, cfg)?;
        let hit = traj.gaps.iter().position(|&g| g <= delta).map(|k| traj.times[k]);
        return Ok(HittingTime { time: hit, censored: hit.is_none() });
    }
    let h = cfg.fine_step;
    let n = (cfg.horizon / h).ceil() as usize;
    let mut x = x0.clone();
    for k in 0..n {
        let next = rk4(p, &x, h)?;
        if p.gap(&next)? <= delta {
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > 1e-13 {
                let mid = 0.5 * (lo + hi);
                if p.gap(&rk4(p, &x, mid)?)? <= delta {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(HittingTime { time: Some(k as f64 * h + hi), censored: false });
        }
        x = next;
    }
    Ok(HittingTime { time: None, censored: true })
}

#[derive(Debug, Clone, Serialize)]
pub struct EulerErrorRow {
    pub eps: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EulerStudy {
    pub rows: Vec<EulerErrorRow>,
    /// `e(ε)/e(ε/2)` for consecutive entries that halve ε.
    pub ratios: Vec<Option<f64>>,
    pub orders: Vec<Option<f64>>,
}

fn halving_ratios(rows: &[(f64, f64)]) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    rows.windows(2)
        .map(|w| {
            let halves = (w[1].0 * 2.0 - w[0].0).abs() <= 1e-12 * w[0].0;
            if halves && w[1].1 > 0.0 {
                let r = w[0].1 / w[1].1;
                (Some(r), Some(r.log2()))
            } else {
                (None, None)
            }
        })
        .unzip()
}

/// Sup-norm distance between interpolated Euler iterates and a reference
/// solution over a fine sample grid on `[0, t_end]`.
pub fn euler_error_study(p: &FlowProblem, x0: &Point, t_end: f64, eps_list: &[f64]) -> Result<EulerStudy> {
    let eps_min = eps_list.iter().copied().fold(f64::INFINITY, f64::min);
    let cfg = IntegratorConfig::for_eps(eps_min);
    let mode = if p.is_piecewise() { FlowMode::Piecewise } else { FlowMode::Smooth };
    let reference = integrate_flow(p, x0, t_end, mode, &cfg)?;
    let (n, h) = smooth_steps(t_end, cfg.fine_step);
    let grid: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
    let mut rows = Vec::new();
    for &eps in eps_list {
        let euler = euler_trajectory(p, x0, eps, t_end)?;
        let error = grid
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let r = if mode == FlowMode::Smooth { reference.points[k].clone() } else { reference.position_at(t) };
                (euler.position_at(t) - r).norm()
            })
            .fold(0.0, f64::max);
        rows.push(EulerErrorRow { eps, error });
    }
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.error)).collect();
    let (ratios, orders) = halving_ratios(&pairs);
    Ok(EulerStudy { rows, ratios, orders })
}

#[derive(Debug, Clone, Serialize)]
pub struct OffsetRow {
    pub eps: f64,
    /// Largest `|n·(x_k − x_Σ)|` over iterates after the first crossing; absent if none crossed.
    pub max_offset: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OffsetStudy {
    pub rows: Vec<OffsetRow>,
    pub ratios: Vec<Option<f64>>,
}

/// Normal offset of Euler iterates relative to a planar interface `n·(x − x_Σ) = 0`,
/// measured over `[0, t_end]` after the iterates first cross it.
pub fn interface_offset_study(
    p: &FlowProblem,
    x0: &Point,
    t_end: f64,
    eps_list: &[f64],
    normal: &Point,
    on_interface: &Point,
) -> Result<OffsetStudy> {
    let mut rows = Vec::new();
    for &eps in eps_list {
        let traj = euler_trajectory(p, x0, eps, t_end)?;
        let offsets: Vec<f64> = traj.points.iter().map(|x| normal.dot(&(x - on_interface))).collect();
        let first = offsets.windows(2).position(|w| w[0].signum() != w[1].signum() || w[1] == 0.0);
        let max_offset = first.map(|k| offsets[k + 1..].iter().map(|o| o.abs()).fold(0.0, f64::max));
        rows.push(OffsetRow { eps, max_offset });
    }
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.max_offset.unwrap_or(0.0))).collect();
    let (ratios, _) = halving_ratios(&pairs);
    Ok(OffsetStudy { rows, ratios })
}

#[derive(Debug, Clone, Serialize)]
pub struct HittingEntry {
    pub eps: f64,
    pub k: Option<usize>,
    /// Exactly `eps * k`.
    pub t_star: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HittingRecord {
    pub delta: f64,
    /// `None` stands for `+∞` (censored at the horizon).
    pub t_star_continuous: Option<f64>,
    pub entries: Vec<HittingEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HittingStudy {
    pub record: HittingRecord,
    pub errors: Vec<Option<f64>>,
    /// Log-log slope of `|t*(ε) − T*|` against ε, over nonzero errors.
    pub slope: Option<f64>,
}

pub fn hitting_convergence_study(
    p: &FlowProblem,
    x0: &Point,
    delta: f64,
    eps_list: &[f64],
    k_max: usize,
    cfg: &IntegratorConfig,
) -> Result<HittingStudy> {
    let cont = hitting_time_continuous(p, x0, delta, cfg)?;
    let mut entries = Vec::new();
    for &eps in eps_list {
        let run = run_rrr(p, x0, eps, k_max, delta)?;
        entries.push(HittingEntry { eps, k: run.k, t_star: run.t_star });
    }
    let errors: Vec<Option<f64>> = entries
        .iter()
        .map(|e| match (e.t_star, cont.time) {
            (Some(a), Some(b)) => Some((a - b).abs()),
            _ => None,
        })
        .collect();
    let pts: Vec<(f64, f64)> = entries
        .iter()
        .zip(&errors)
        .filter_map(|(e, err)| err.filter(|&v| v > 0.0).map(|v| (e.eps.ln(), v.ln())))
        .collect();
    let slope = (pts.len() >= 2).then(|| ols(&pts).1);
    Ok(HittingStudy { record: HittingRecord { delta, t_star_continuous: cont.time, entries }, errors, slope })
}

/// Ordinary least squares `y = a + b x`, returning `(a, b, R²)`; `R² = 1` when
/// the data have no spread.
pub fn ols_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    (a, b, r2)
}

fn ols(pts: &[(f64, f64)]) -> (f64, f64) {
    let (a, b, _) = ols_fit(pts);
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub mu_hat: f64,
    pub c_hat: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
}

/// Least-squares line through `(t, ln g(t))` over the samples in `window`.
pub fn fit_decay_rate(traj: &Trajectory, window: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.gaps)
        .filter(|(&t, _)| t >= window.0 && t <= window.1)
        .map(|(&t, &g)| (t, g))
        .collect();
    if pts.len() < 2 || pts.iter().any(|p| !(p.1 > 0.0)) {
        return Err(Error::InvalidArgument("decay fit needs at least two samples with positive gap".into()));
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|&(t, g)| (t, g.ln())).collect();
    let (_, slope, r_squared) = ols_fit(&logs);
    let mu_hat = -slope;
    let (t0, g0) = pts[0];
    let c_hat = pts
        .iter()
        .map(|&(t, g)| g / (g0 * (-mu_hat * (t - t0)).exp()))
        .fold(1.0, f64::max);
    Ok(DecayFit { mu_hat, c_hat, window, r_squared })
}

#[derive(Debug, Clone, Serialize)]
pub struct LogLawFit {
    /// Hitting times against `ln(1/δ)`; censored thresholds are skipped.
    pub points: Vec<(f64, f64)>,
    pub c1: f64,
    pub c2: f64,
    pub r_squared: f64,
}

/// Fit `T*_δ ≈ c1 + c2 ln(1/δ)` across a grid of thresholds.
pub fn fit_log_law(p: &FlowProblem, x0: &Point, deltas: &[f64], cfg: &IntegratorConfig) -> Result<LogLawFit> {
    let mut points = Vec::new();
    for &d in deltas {
        if let Some(t) = hitting_time_continuous(p, x0, d, cfg)?.time {
            points.push(((1.0 / d).ln(), t));
        }
    }
    if points.len() < 2 {
        return Err(Error::InvalidArgument("log-law fit needs two uncensored thresholds".into()));
    }
    let (c1, c2, r_squared) = ols_fit(&points);
    Ok(LogLawFit { points, c1, c2, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use nalgebra::dvector;

    #[test]
    fn flow_field_examples() {
        let p = catalog::orthogonal_lines();
        assert_eq!(p.flow_field(&dvector![1.0, 1.0]).unwrap(), dvector![-1.0, -1.0]);
        assert!((p.gap(&dvector![1.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(p.rrr_step(&dvector![1.0, 1.0], 0.5).unwrap(), dvector![0.5, 0.5]);
        assert_eq!(p.flow_field(&dvector![0.0, 0.0]).unwrap(), dvector![0.0, 0.0]);

        let t = catalog::trap_1d();
        assert_eq!(t.flow_field(&dvector![1.5]).unwrap(), dvector![1.0]);
        assert!((t.rrr_step(&dvector![1.5], 0.1).unwrap()[0] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn run_rrr_closed_form() {
        let p = catalog::orthogonal_lines();
        let run = run_rrr(&p, &dvector![1.0, 0.0], 0.01, 10_000, 0.1).unwrap();
        let expect = ((0.1f64).ln() / (0.99f64).ln()).ceil() as usize;
        assert_eq!(expect, 230);
        assert_eq!(run.k, Some(230));
        assert_eq!(run.t_star, Some(0.01 * 230.0));

        let run = run_rrr(&p, &dvector![1.0, 0.0], 0.01, 10, 2.0).unwrap();
        assert_eq!((run.k, run.t_star), (Some(0), Some(0.0)));

        let run = run_rrr(&p, &dvector![1.0, 0.0], 0.01, 5, 0.1).unwrap();
        assert!(run.censored);
    }

    #[test]
    fn piecewise_trap_stops_at_filippov_equilibrium() {
        let p = catalog::trap_1d();
        let traj = integrate_flow(&p, &dvector![1.5], 2.0, FlowMode::Piecewise, &IntegratorConfig::default()).unwrap();
        let eq = traj.events.iter().find(|e| e.kind == EventKind::FilippovEquilibrium).unwrap();
        assert!((eq.time - 1.0).abs() < 1e-10);
        assert!((traj.endpoint()[0] - 2.5).abs() < 1e-10);
        assert_eq!(*traj.labels.last().unwrap(), SegmentLabel::Equilibrium { solution: false });
        assert!(traj.times_strictly_increasing());
    }

    #[test]
    fn piecewise_trap_capture_time() {
        let p = catalog::trap_1d();
        let h = hitting_time_continuous(&p, &dvector![-2.0], 0.5, &IntegratorConfig::default()).unwrap();
        assert!((h.time.unwrap() - 1.0 / 6.0).abs() < 1e-10);
        let run = run_rrr(&p, &dvector![-2.0], 0.01, 10_000, 0.5).unwrap();
        assert!((run.t_star.unwrap() - 1.0 / 6.0).abs() <= 0.01 * 3.0);
    }

    #[test]
    fn constant_trajectory_inside_solution_cell() {
        let p = catalog::trap_1d();
        let traj = integrate_piecewise(&p, &dvector![0.5], 1.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(traj.points, vec![dvector![0.5], dvector![0.5]]);
        assert_eq!(traj.events[0].kind, EventKind::Capture);
    }

    #[test]
    fn smooth_orthogonal_endpoint() {
        let p = catalog::orthogonal_lines();
        let traj = integrate_flow(&p, &dvector![1.0, 0.0], 1.0, FlowMode::Smooth, &IntegratorConfig::default()).unwrap();
        assert!((traj.endpoint() - dvector![(-1.0f64).exp(), 0.0]).norm() < 1e-8);
        let h = hitting_time_continuous(&p, &dvector![1.0, 0.0], (-1.0f64).exp(), &IntegratorConfig::default()).unwrap();
        assert!((h.time.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn decay_fits() {
        let cfg = IntegratorConfig::default();
        let p = catalog::orthogonal_lines();
        let traj = integrate_flow(&p, &dvector![1.0, 0.0], 5.0, FlowMode::Smooth, &cfg).unwrap();
        let fit = fit_decay_rate(&traj, (0.0, 5.0)).unwrap();
        assert!((fit.mu_hat - 1.0).abs() < 1e-6 && fit.r_squared > 0.999_999);

        let p = catalog::parallel_lines();
        let traj = integrate_flow(&p, &dvector![0.3, 0.2], 5.0, FlowMode::Smooth, &cfg).unwrap();
        assert!(fit_decay_rate(&traj, (0.0, 5.0)).unwrap().mu_hat.abs() < 1e-9);
    }

    #[test]
    fn parallel_lines_translate_exactly() {
        let p = catalog::parallel_lines();
        let x0 = dvector![0.25, 0.5];
        let v = p.flow_field(&x0).unwrap();
        let traj = euler_trajectory(&p, &x0, 0.125, 4.0).unwrap();
        for (k, x) in traj.points.iter().enumerate() {
            let drift = x - &x0 - &v * (k as f64 * 0.125);
            assert!(drift.norm() <= 1e-12, "k={k} drift={}", drift.norm());
        }
    }

    #[test]
    fn ols_recovers_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 1.0 + 2.0 * k as f64)).collect();
        let (a, b, r2) = ols_fit(&pts);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && r2 == 1.0);
    }
}
