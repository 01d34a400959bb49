//! One-layer low-rank EDM feasibility benchmark: instance, wire lift, two-phase
//! RRR runs, and the empirical estimators computed from them.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ols_fit, FlowProblem};
use crate::sets::{Point, ProductBlock, ProjectionStats, SetOracle, Tolerances};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedmInstance {
    pub m: usize,
    pub y: DMatrix<f64>,
    pub rank: usize,
    /// Stored for reference only; no computation reads it.
    pub omega: f64,
    pub batch: usize,
    pub k_max: usize,
    pub delta_enter: f64,
    pub delta_solve: f64,
}

/// Optional replacements for the defaults of [`build_instance`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedmOverrides {
    pub rank: Option<usize>,
    pub omega: Option<f64>,
    pub k_max: Option<usize>,
    pub delta_enter: Option<f64>,
    pub delta_solve: Option<f64>,
    /// Replace the target matrix (must be `m × m`, finite, nonnegative).
    pub y: Option<Vec<Vec<f64>>>,
}

pub const DEFAULT_DELTA_ENTER: f64 = 1e-2;
pub const DEFAULT_DELTA_SOLVE: f64 = 3e-2;
pub const DEFAULT_K_MAX: usize = 20_000;
pub const DEFAULT_OMEGA: f64 = 0.75;

/// `Y_ij = ((i − j)/(m − 1))²`, rank `m − 1`, batch `m`.
pub fn build_instance(m: usize, ov: &LedmOverrides) -> Result<LedmInstance> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("matrix size must be at least 2, got {m}")));
    }
    let y = match &ov.y {
        Some(rows) => {
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(Error::InvalidArgument("override Y must be m x m".into()));
            }
            if rows.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidArgument("override Y must be finite and nonnegative".into()));
            }
            DMatrix::from_fn(m, m, |i, j| rows[i][j])
        }
        None => {
            let d = (m - 1) as f64;
            DMatrix::from_fn(m, m, |i, j| ((i as f64 - j as f64) / d).powi(2))
        }
    };
    let rank = ov.rank.unwrap_or(m - 1);
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    Ok(LedmInstance {
        m,
        y,
        rank,
        omega: ov.omega.unwrap_or(DEFAULT_OMEGA),
        batch: m,
        k_max: ov.k_max.unwrap_or(DEFAULT_K_MAX),
        delta_enter: ov.delta_enter.unwrap_or(DEFAULT_DELTA_ENTER),
        delta_solve: ov.delta_solve.unwrap_or(DEFAULT_DELTA_SOLVE),
    })
}

impl LedmInstance {
    pub fn n(&self) -> usize {
        self.batch
    }

    /// Offset of block `(i, v)`: `u_{i,v}` then `s_{i,v}`, each of length `rank`.
    pub fn block_offset(&self, i: usize, v: usize) -> usize {
        (i * self.n() + v) * 2 * self.rank
    }

    pub fn state_dim(&self) -> usize {
        2 * self.m * self.n() * self.rank
    }

    /// Consensus averages `(W, Z)` of a state, without clamping.
    pub fn averages(&self, x: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (m, n, r) = (self.m, self.n(), self.rank);
        let mut w = DMatrix::zeros(m, r);
        let mut z = DMatrix::zeros(n, r);
        for i in 0..m {
            for v in 0..n {
                let o = self.block_offset(i, v);
                for k in 0..r {
                    w[(i, k)] += x[o + k] / n as f64;
                    z[(v, k)] += x[o + r + k] / m as f64;
                }
            }
        }
        (w, z)
    }

    /// State with every copy equal to the given factors.
    pub fn state_from_factors(&self, w: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Point> {
        let r = self.rank;
        if w.shape() != (self.m, r) || z.shape() != (self.n(), r) {
            return Err(Error::InvalidArgument("factor shapes must be (m, r) and (n, r)".into()));
        }
        let mut x = vec![0.0; self.state_dim()];
        for i in 0..self.m {
            for v in 0..self.n() {
                let o = self.block_offset(i, v);
                for k in 0..r {
                    x[o + k] = w[(i, k)];
                    x[o + r + k] = z[(v, k)];
                }
            }
        }
        Ok(Point::from_vec(x))
    }
}

/// Relation blocks `u·s = Y_iv` with `u, s >= 0` as set `A`; row and column
/// consensus diagonals as set `B`.
pub fn lift(inst: &LedmInstance) -> Result<FlowProblem> {
    let (m, n, r) = (inst.m, inst.n(), inst.rank);
    let dim = inst.state_dim();
    let mut a_blocks = Vec::with_capacity(m * n);
    for i in 0..m {
        for v in 0..n {
            let o = inst.block_offset(i, v);
            a_blocks.push(ProductBlock {
                indices: (o..o + 2 * r).collect(),
                set: SetOracle::bilinear(inst.y[(i, v)], r, true)?,
            });
        }
    }
    let mut b_blocks = Vec::with_capacity(m + n);
    for i in 0..m {
        let indices = (0..n).flat_map(|v| {
            let o = inst.block_offset(i, v);
            o..o + r
        });
        b_blocks.push(ProductBlock { indices: indices.collect(), set: SetOracle::consensus(n, r, false)? });
    }
    for v in 0..n {
        let indices = (0..m).flat_map(|i| {
            let o = inst.block_offset(i, v) + r;
            o..o + r
        });
        b_blocks.push(ProductBlock { indices: indices.collect(), set: SetOracle::consensus(m, r, false)? });
    }
    FlowProblem::new(SetOracle::product(dim, a_blocks)?, SetOracle::product(dim, b_blocks)?)
}

/// `‖Y − W Zᵀ‖_F / ‖Y‖_F` with `W`, `Z` clamped at zero.
pub fn residual_from_factors(y: &DMatrix<f64>, w: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let w = w.map(|v| v.max(0.0));
    let z = z.map(|v| v.max(0.0));
    let denom = y.norm();
    let num = (y - w * z.transpose()).norm();
    if denom == 0.0 {
        num
    } else {
        num / denom
    }
}

/// Residual of the consensus averages of a state.
pub fn residual(inst: &LedmInstance, x: &[f64]) -> f64 {
    let (w, z) = inst.averages(x);
    residual_from_factors(&inst.y, &w, &z)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRecord {
    pub m: usize,
    pub beta: f64,
    pub seed: u64,
    pub k_enter: Option<usize>,
    pub k_solve: Option<usize>,
    pub censored: bool,
    pub t_search: Option<f64>,
    pub t_conv: Option<f64>,
    pub err_final: f64,
    /// `err(x_k)` for `k = 0..` until both thresholds were hit or the budget ran out.
    #[serde(skip)]
    pub trace: Vec<f64>,
    pub inexact_projections: u64,
}

impl PhaseRecord {
    /// `T_search + T_conv = β k_solve` when both hits occurred with `k_enter <= k_solve`.
    pub fn identity_holds(&self) -> bool {
        match (self.k_enter, self.k_solve, self.t_search, self.t_conv) {
            (Some(ke), Some(ks), Some(ts), Some(tc)) if ke <= ks => {
                (ts + tc - self.beta * ks as f64).abs() <= 1e-12 * (1.0 + self.beta * ks as f64)
            }
            _ => true,
        }
    }
}

#[derive(Serialize)]
struct CsvRow {
    m: usize,
    beta: f64,
    seed: u64,
    k_enter: Option<usize>,
    k_solve: Option<usize>,
    censored: bool,
    #[serde(rename = "T_search")]
    t_search: Option<f64>,
    #[serde(rename = "T_conv")]
    t_conv: Option<f64>,
    err_final: f64,
}

/// Records as CSV with a header row and LF line endings.
pub fn records_csv(records: &[PhaseRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in records {
        w.serialize(CsvRow {
            m: r.m,
            beta: r.beta,
            seed: r.seed,
            k_enter: r.k_enter,
            k_solve: r.k_solve,
            censored: r.censored,
            t_search: r.t_search,
            t_conv: r.t_conv,
            err_final: r.err_final,
        })
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    if records.is_empty() {
        w.write_record(["m", "beta", "seed", "k_enter", "k_solve", "censored", "T_search", "T_conv", "err_final"])
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Uniform `[0, 1]` initialization of every copy.
pub fn initial_state(inst: &LedmInstance, seed: u64) -> Point {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Point::from_iterator(inst.state_dim(), (0..inst.state_dim()).map(|_| rng.gen::<f64>()))
}

/// RRR with step `beta` on the lifted problem. The observable at iterate `k`
/// is the residual of `P_A x_k`.
pub fn run_two_phase(inst: &LedmInstance, problem: &FlowProblem, beta: f64, seed: u64) -> Result<PhaseRecord> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!("beta must lie in (0, 1], got {beta}")));
    }
    let tol = Tolerances::default();
    let mut stats = ProjectionStats::default();
    let mut x = initial_state(inst, seed);
    let mut trace = Vec::new();
    let (mut k_enter, mut k_solve) = (None, None);
    let mut k = 0usize;
    loop {
        let pa = problem.a().project_with(&x, &tol, &mut stats)?;
        let err = residual(inst, pa.as_slice());
        trace.push(err);
        if k_enter.is_none() && err <= inst.delta_enter {
            k_enter = Some(k);
        }
        if k_solve.is_none() && err <= inst.delta_solve {
            k_solve = Some(k);
        }
        if (k_enter.is_some() && k_solve.is_some()) || k == inst.k_max {
            break;
        }
        let ra = crate::sets::reflect_through(&pa, &x);
        let pb = problem.b().project_with(&ra, &tol, &mut stats)?;
        x += (pb - pa) * beta;
        k += 1;
    }
    let t_search = k_enter.map(|ke| beta * ke as f64);
    let t_conv = match (k_enter, k_solve) {
        (Some(ke), Some(ks)) => Some(beta * ks.saturating_sub(ke) as f64),
        _ => None,
    };
    Ok(PhaseRecord {
        m: inst.m,
        beta,
        seed,
        k_enter,
        k_solve,
        censored: k_enter.is_none() || k_solve.is_none(),
        t_search,
        t_conv,
        err_final: *trace.last().unwrap(),
        trace,
        inexact_projections: stats.inexact_blocks,
    })
}

/// Independent trials with seeds `seed, seed + 1, ...`, returned in seed order.
pub fn run_trials(inst: &LedmInstance, beta: f64, trials: usize, seed: u64) -> Result<Vec<PhaseRecord>> {
    let problem = lift(inst)?;
    (0..trials as u64)
        .into_par_iter()
        .map(|t| run_two_phase(inst, &problem, beta, seed + t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntryEstimate {
    pub p_hat: f64,
    pub lower: f64,
    pub upper: f64,
    pub entered: usize,
    pub trials: usize,
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = 1.959_963_984_540_054_f64;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn entry_probability_from(records: &[PhaseRecord]) -> Result<EntryEstimate> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let entered = records.iter().filter(|r| r.k_enter.is_some()).count();
    let (lower, upper) = wilson_interval(entered, records.len());
    Ok(EntryEstimate { p_hat: entered as f64 / records.len() as f64, lower, upper, entered, trials: records.len() })
}

pub fn entry_probability(inst: &LedmInstance, beta: f64, trials: usize, seed: u64) -> Result<EntryEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    entry_probability_from(&run_trials(inst, beta, trials, seed)?)
}

pub const DEFAULT_RECURRENCE_BINS: usize = 20;

/// Default burn-in: a tenth of the trace, rounded up.
pub fn default_burn_in(len: usize) -> usize {
    len.div_ceil(10)
}

/// Fraction of post-burn-in steps whose quantile bin of `log10 err` was
/// already visited earlier in the trace.
pub fn recurrence_index(trace: &[f64], bins: usize, burn_in: usize) -> Result<f64> {
    let t = trace.len();
    if bins == 0 || t <= burn_in {
        return Err(Error::InvalidArgument("need bins >= 1 and a trace longer than the burn-in".into()));
    }
    let logs: Vec<f64> = trace.iter().map(|e| e.max(f64::MIN_POSITIVE).log10()).collect();
    let mut sorted = logs.clone();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins).map(|j| sorted[(j * t / bins).min(t - 1)]).collect();
    let states: Vec<usize> = logs.iter().map(|x| edges.iter().filter(|&&e| e <= *x).count()).collect();
    let mut seen = vec![false; bins];
    let mut hits = 0usize;
    for (k, &s) in states.iter().enumerate() {
        if k >= burn_in && seen[s] {
            hits += 1;
        }
        seen[s] = true;
    }
    Ok(hits as f64 / (t - burn_in) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EulerFit {
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
    /// `(β, mean T_conv)` per β.
    pub points: Vec<(f64, f64)>,
}

/// OLS of mean `T_conv` on β over solved records with `β <= 0.3`.
pub fn euler_fit(records: &[PhaseRecord]) -> Result<EulerFit> {
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for r in records.iter().filter(|r| r.beta <= 0.3) {
        if let Some(tc) = r.t_conv {
            match groups.iter_mut().find(|g| g.0 == r.beta) {
                Some(g) => g.1.push(tc),
                None => groups.push((r.beta, vec![tc])),
            }
        }
    }
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!("need solved runs at two or more beta values, found {}", groups.len())));
    }
    groups.sort_by(|x, y| x.0.total_cmp(&y.0));
    let points: Vec<(f64, f64)> = groups.iter().map(|(b, v)| (*b, v.iter().sum::<f64>() / v.len() as f64)).collect();
    let (a, b, r_squared) = ols_fit(&points);
    Ok(EulerFit { a, b, r_squared, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_examples() {
        let i = build_instance(2, &LedmOverrides::default()).unwrap();
        assert_eq!(i.y, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let i = build_instance(3, &LedmOverrides::default()).unwrap();
        assert_eq!(i.y, DMatrix::from_row_slice(3, 3, &[0.0, 0.25, 1.0, 0.25, 0.0, 0.25, 1.0, 0.25, 0.0]));
        assert!(build_instance(1, &LedmOverrides::default()).is_err());
    }

    #[test]
    fn lift_dimension_and_fixed_points() {
        let i = build_instance(2, &LedmOverrides::default()).unwrap();
        let p = lift(&i).unwrap();
        assert_eq!(p.dim(), 8);
        let x = Point::from_vec(vec![0.3; 8]);
        assert_eq!(p.b().project(&x).unwrap(), x);
    }

    #[test]
    fn residual_examples() {
        let y = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let zero = DMatrix::zeros(2, 1);
        assert_eq!(residual_from_factors(&y, &zero, &zero), 1.0);
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        assert!((residual_from_factors(&y, &w, &z) - 0.5).abs() < 1e-15);
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(residual_from_factors(&y, &w, &z), 0.0);
    }

    #[test]
    fn recurrence_examples() {
        assert_eq!(recurrence_index(&[0.5; 20], 20, default_burn_in(20)).unwrap(), 1.0);
        let mono: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        assert_eq!(recurrence_index(&mono, 10, 0).unwrap(), 0.0);
        assert_eq!(recurrence_index(&[1.0, 2.0, 1.0, 2.0, 1.0], 2, 1).unwrap(), 1.0);
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(10, 10);
        assert!(lo > 0.69 && hi > 1.0 - 1e-12);
        let (lo, hi) = wilson_interval(0, 10);
        assert!(lo == 0.0 && hi < 0.31);
    }
}
