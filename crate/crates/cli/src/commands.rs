use anyhow::{anyhow, bail, Context, Result};
use rrr_core::criteria;
use rrr_core::flow::{
    euler_trajectory, fit_decay_rate, hitting_convergence_study, integrate_flow, FlowMode, IntegratorConfig,
};
use rrr_core::ledm::{
    build_instance, default_burn_in, entry_probability_from, euler_fit, records_csv, recurrence_index, run_trials,
    LedmOverrides, PhaseRecord,
};
use rrr_core::linearize::{solve_transverse_lyapunov, spectral_report};
use rrr_core::meso::{beta_sweep, estimate_kernel, support_digraph, BoxMeasure};
use rrr_core::wdomains::{descent_chain, measure_capture, CellId, CellPartition};
use rrr_core::{FlowProblem, Point, Trajectory};
use serde_json::{json, Value};

use crate::config::*;
use crate::store::{sha256_hex, Manifest, Run};

/// What a command reports back to `main`.
pub struct Outcome {
    pub summary: Vec<String>,
    pub ok: bool,
}

impl Outcome {
    fn ok(summary: Vec<String>) -> Self {
        Self { summary, ok: true }
    }
}

pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow!("csv: {e}"))?)
}

fn json_bytes(v: &Value) -> Vec<u8> {
    to_json(v)
}

fn opt(v: Option<impl ToString>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn point_arg(given: &Option<Vec<f64>>, fallback: Vec<f64>, dim: usize, field: &str) -> Result<Point> {
    let v = given.clone().unwrap_or(fallback);
    if v.len() != dim {
        return Err(usage(format!("{field}: expected {dim} coordinates, got {}", v.len())));
    }
    Ok(Point::from_vec(v))
}

pub fn trajectory_csv(traj: &Trajectory) -> Result<Vec<u8>> {
    let m = traj.points.first().map_or(0, |p| p.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|k| format!("x{k}")));
    header.extend(["label".to_string(), "gap".to_string()]);
    let rows: Vec<Vec<String>> = (0..traj.points.len())
        .map(|k| {
            let mut r = vec![traj.times[k].to_string()];
            r.extend(traj.points[k].iter().map(f64::to_string));
            let label = traj.labels.get(k).or(traj.labels.last()).map(|l| l.to_string()).unwrap_or_default();
            r.push(label);
            r.push(traj.gaps[k].to_string());
            r
        })
        .collect();
    csv_bytes(&header, &rows)
}

pub fn linearize(cfg: &LinearizeConfig, run: &mut Run) -> Result<Outcome> {
    let p = cfg.instance.build()?;
    let x = point_arg(&cfg.point, cfg.instance.default_feasible(p.dim()), p.dim(), "point")?;
    let gap = p.gap(&x)?;
    if gap > 1e-8 {
        bail!("point is not feasible for both sets (gap {gap:.3e})");
    }
    let rep = spectral_report(&p, &x)?;
    let lyap = match solve_transverse_lyapunov(&rep) {
        Ok(c) => json!({"gamma": c.gamma, "residual": c.residual}),
        Err(e) => json!({"error": e.to_string()}),
    };
    let angles: Vec<f64> = rep.angles.transverse.iter().map(|t| t.to_degrees()).collect();
    let out = json!({
        "point": x.as_slice(),
        "angles_deg": angles,
        "intersection_dim": rep.angles.intersection_dim,
        "eigenvalues": rep.eigenvalues,
        "symmetric_eigenvalues": rep.symmetric_eigenvalues,
        "sigma": rep.sigma,
        "spectrum_deviation": rep.spectrum_deviation,
        "symmetric_deviation": rep.symmetric_deviation,
        "intersection_residual": rep.intersection_residual,
        "checks_pass": rep.checks_pass(1e-8),
        "lyapunov": lyap,
    });
    run.write("report.json", &json_bytes(&out))?;
    Ok(Outcome::ok(vec![
        format!("principal angles (deg): {angles:?}"),
        format!("eigenvalues: {:?}", rep.eigenvalues),
    ]))
}

pub fn flow(cfg: &FlowConfig, run: &mut Run) -> Result<Outcome> {
    let p = cfg.instance.build()?;
    let x0 = point_arg(&cfg.x0, cfg.instance.default_start(p.dim()), p.dim(), "x0")?;
    if !(cfg.t_end > 0.0) {
        return Err(usage("t_end must be positive"));
    }
    let icfg = IntegratorConfig { fine_step: cfg.fine_step, event_budget: cfg.event_budget, ..IntegratorConfig::default() };
    let traj = match cfg.eps {
        Some(eps) => euler_trajectory(&p, &x0, eps, cfg.t_end)?,
        None => {
            let mode = match cfg.mode {
                ModeChoice::Smooth => FlowMode::Smooth,
                ModeChoice::Piecewise => FlowMode::Piecewise,
                ModeChoice::Auto if p.is_piecewise() => FlowMode::Piecewise,
                ModeChoice::Auto => FlowMode::Smooth,
            };
            integrate_flow(&p, &x0, cfg.t_end, mode, &icfg)?
        }
    };
    run.write("trajectory.csv", &trajectory_csv(&traj)?)?;
    let window = cfg.fit_window.unwrap_or((0.0, traj.end_time()));
    let fit = match fit_decay_rate(&traj, window) {
        Ok(f) => serde_json::to_value(f)?,
        Err(e) => json!({"error": e.to_string()}),
    };
    let final_gap = *traj.gaps.last().unwrap();
    let summary = json!({
        "end_time": traj.end_time(),
        "endpoint": traj.endpoint().as_slice(),
        "final_gap": final_gap,
        "samples": traj.points.len(),
        "events": traj.events,
        "decay_fit": fit,
    });
    run.write("summary.json", &json_bytes(&summary))?;
    Ok(Outcome::ok(vec![
        format!("{} samples to t = {}", traj.points.len(), traj.end_time()),
        format!("final gap {final_gap:.6e}, {} events", traj.events.len()),
    ]))
}

pub fn hitting(cfg: &HittingConfig, run: &mut Run) -> Result<Outcome> {
    let p = cfg.instance.build()?;
    let x0 = point_arg(&cfg.x0, cfg.instance.default_start(p.dim()), p.dim(), "x0")?;
    if cfg.eps.is_empty() || cfg.eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(usage("eps: need a nonempty list of steps in (0, 1]"));
    }
    let icfg = IntegratorConfig { horizon: cfg.horizon, ..IntegratorConfig::for_eps(cfg.eps.iter().copied().fold(1.0, f64::min)) };
    let study = hitting_convergence_study(&p, &x0, cfg.delta, &cfg.eps, cfg.k_max, &icfg)?;
    let header: Vec<String> = ["eps", "k", "t_star", "abs_error"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = study
        .record
        .entries
        .iter()
        .zip(&study.errors)
        .map(|(e, err)| vec![e.eps.to_string(), opt(e.k), opt(e.t_star), opt(*err)])
        .collect();
    run.write("hitting.csv", &csv_bytes(&header, &rows)?)?;
    run.write("summary.json", &json_bytes(&serde_json::to_value(&study)?))?;
    Ok(Outcome::ok(vec![
        format!("continuous hitting time {}", opt(study.record.t_star_continuous)),
        format!("log-log error slope {}", opt(study.slope)),
    ]))
}

fn partition(instance: &InstanceConfig) -> Result<(FlowProblem, CellPartition)> {
    let p = instance.build()?;
    let part = CellPartition::from_problem(&p).map_err(|e| usage(format!("instance: {e}")))?;
    Ok((p, part))
}

pub fn wdomain(cfg: &WdomainConfig, run: &mut Run) -> Result<Outcome> {
    let (p, part) = partition(&cfg.instance)?;
    let m = part.dim();
    let nonempty = part.nonempty_cells();
    let mut header: Vec<String> = ["a", "b", "d", "solution", "nonempty"].map(String::from).to_vec();
    header.extend((1..=m).map(|k| format!("v{k}")));
    let rows: Vec<Vec<String>> = part
        .all_cells()
        .map(|c| {
            let mut r = vec![
                c.a.to_string(),
                c.b.to_string(),
                part.d(c).to_string(),
                part.is_solution(c).to_string(),
                nonempty.contains(&c).to_string(),
            ];
            r.extend(part.velocity(c).iter().map(f64::to_string));
            r
        })
        .collect();
    run.write("cells.csv", &csv_bytes(&header, &rows)?)?;

    let mut header: Vec<String> = ["first", "second", "convergent", "alpha"].map(String::from).to_vec();
    header.extend((1..=m).map(|k| format!("n{k}")));
    header.extend((1..=m).map(|k| format!("vs{k}")));
    let mut rows = Vec::new();
    let mut convergent = 0;
    for adj in part.adjacency() {
        let i = part.interface(adj.first, adj.second)?;
        convergent += i.convergent as usize;
        let mut r = vec![i.first.to_string(), i.second.to_string(), i.convergent.to_string(), opt(i.alpha)];
        r.extend(i.normal.iter().map(f64::to_string));
        match &i.sliding {
            Some(v) => r.extend(v.iter().map(f64::to_string)),
            None => r.extend(std::iter::repeat(String::new()).take(m)),
        }
        rows.push(r);
    }
    run.write("interfaces.csv", &csv_bytes(&header, &rows)?)?;

    let start = match cfg.start {
        Some((a, b)) => {
            let c = CellId::new(a, b);
            if !nonempty.contains(&c) {
                return Err(usage(format!("start: cell {c} is empty or out of range")));
            }
            Some(c)
        }
        None => nonempty
            .iter()
            .copied()
            .filter(|&c| !part.is_solution(c))
            .max_by(|x, y| part.d(*x).total_cmp(&part.d(*y)).then(y.cmp(x))),
    };
    let chain = match start.map(|s| descent_chain(&part, s)) {
        Some(Ok(c)) => serde_json::to_value(&c)?,
        Some(Err(e)) => json!({"error": e.to_string()}),
        None => json!({"error": "no non-solution cell to start from"}),
    };
    run.write("chain.json", &json_bytes(&chain))?;

    let mut summary = vec![format!(
        "{} cells, {} nonempty, {} adjacent pairs, {convergent} convergent",
        part.all_cells().count(),
        nonempty.len(),
        rows.len()
    )];
    if let Some(x0) = &cfg.x0 {
        let x0 = point_arg(&Some(x0.clone()), Vec::new(), m, "x0")?;
        let traj = integrate_flow(&p, &x0, cfg.t_end, FlowMode::Piecewise, &IntegratorConfig::default())?;
        run.write("trajectory.csv", &trajectory_csv(&traj)?)?;
        let capture = measure_capture(&traj);
        run.write("capture.json", &json_bytes(&json!({"events": traj.events, "capture": capture})))?;
        summary.push(match capture {
            Some(c) => format!("sliding entry at t = {}, capture at t = {}", c.entry_time, c.capture_time),
            None => format!("no sliding capture before t = {}", traj.end_time()),
        });
    }
    Ok(Outcome::ok(summary))
}

pub fn meso(cfg: &MesoConfig, run: &mut Run) -> Result<Outcome> {
    let (_, part) = partition(&cfg.instance)?;
    let m = part.dim();
    let (lower, upper) = match (&cfg.lower, &cfg.upper) {
        (Some(l), Some(u)) => (l.clone(), u.clone()),
        (None, None) => {
            let mut lo = vec![f64::INFINITY; m];
            let mut hi = vec![f64::NEG_INFINITY; m];
            for p in part.a_points().iter().chain(part.b_points()) {
                for k in 0..m {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
            for k in 0..m {
                let w = (hi[k] - lo[k]).max(1.0);
                lo[k] -= w;
                hi[k] += w;
            }
            (lo, hi)
        }
        _ => return Err(usage("lower/upper: give both or neither")),
    };
    let mu = BoxMeasure::new(lower, upper).map_err(|e| usage(format!("measure box: {e}")))?;
    if cfg.betas.is_empty() || cfg.samples == 0 {
        return Err(usage("betas must be nonempty and samples positive"));
    }
    let sweep = beta_sweep(&part, &cfg.betas, &mu, cfg.samples, cfg.seed, cfg.tau)?;
    let header: Vec<String> = ["beta", "phi", "scc_max", "edges", "samples", "seed"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = sweep
        .rows
        .iter()
        .map(|r| {
            vec![
                r.beta.to_string(),
                r.phi.to_string(),
                r.scc_max.to_string(),
                r.edges.to_string(),
                r.samples.to_string(),
                r.seed.to_string(),
            ]
        })
        .collect();
    run.write("sweep.csv", &csv_bytes(&header, &rows)?)?;
    let mut kernels = Vec::new();
    for (k, &beta) in cfg.betas.iter().enumerate() {
        let kernel = estimate_kernel(&part, beta, &mu, cfg.samples, cfg.seed)?;
        let g = support_digraph(&kernel, cfg.tau)?;
        let mut text = String::new();
        for (i, c) in g.cells.iter().enumerate() {
            text.push_str(&format!("# {i} = {c}{}\n", if g.solution[i] { " solution" } else { "" }));
        }
        text.push_str(&g.graph.to_edge_list());
        run.write(&format!("edges_{k:03}.txt"), text.as_bytes())?;
        kernels.push(kernel);
    }
    run.write(
        "kernels.json",
        &json_bytes(&json!({"kernels": kernels, "monotonicity_violations": sweep.monotonicity_violations})),
    )?;
    let phis: Vec<f64> = sweep.rows.iter().map(|r| r.phi).collect();
    Ok(Outcome::ok(vec![format!("beta {:?} -> phi {phis:?}", cfg.betas)]))
}

fn overrides(m: usize, rank: Option<usize>, k_max: usize, de: f64, ds: f64, omega: f64) -> Result<rrr_core::ledm::LedmInstance> {
    let ov = LedmOverrides {
        rank,
        omega: Some(omega),
        k_max: Some(k_max),
        delta_enter: Some(de),
        delta_solve: Some(ds),
        y: None,
    };
    build_instance(m, &ov).map_err(|e| usage(format!("ledm instance: {e}")))
}

fn recurrence_mean(records: &[PhaseRecord], bins: usize, burn_in: Option<usize>) -> Option<f64> {
    let vals: Vec<f64> = records
        .iter()
        .filter_map(|r| recurrence_index(&r.trace, bins, burn_in.unwrap_or_else(|| default_burn_in(r.trace.len()))).ok())
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = v.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn ledm_run(cfg: &LedmRunConfig, run: &mut Run) -> Result<(Outcome, Vec<u8>)> {
    if cfg.trials == 0 {
        return Err(usage("trials must be at least 1"));
    }
    let inst = overrides(cfg.m, cfg.rank, cfg.k_max, cfg.delta_enter, cfg.delta_solve, cfg.omega)?;
    let records = run_trials(&inst, cfg.beta, cfg.trials, cfg.seed).map_err(|e| match e {
        rrr_core::Error::InvalidArgument(msg) => usage(msg),
        other => other.into(),
    })?;
    let csv = records_csv(&records)?;
    run.write("records.csv", csv.as_bytes())?;
    let entry = entry_probability_from(&records)?;
    let summary = json!({
        "entry": entry,
        "solved": records.iter().filter(|r| !r.censored).count(),
        "mean_t_search": mean(records.iter().filter_map(|r| r.t_search)),
        "mean_t_conv": mean(records.iter().filter_map(|r| r.t_conv)),
        "recurrence_mean": recurrence_mean(&records, cfg.bins, cfg.burn_in),
        "inexact_projections": records.iter().map(|r| r.inexact_projections).sum::<u64>(),
    });
    run.write("summary.json", &json_bytes(&summary))?;
    let out = Outcome::ok(vec![format!(
        "m = {}, beta = {}: entered {}/{} (95% CI [{:.3}, {:.3}])",
        cfg.m, cfg.beta, entry.entered, entry.trials, entry.lower, entry.upper
    )]);
    Ok((out, csv.into_bytes()))
}

pub fn ledm_sweep(cfg: &LedmSweepConfig, run: &mut Run) -> Result<Outcome> {
    if cfg.trials == 0 || cfg.ms.is_empty() || cfg.betas.is_empty() {
        return Err(usage("ms and betas must be nonempty and trials at least 1"));
    }
    let header: Vec<String> =
        ["m", "beta", "trials", "entered", "p_enter", "p_lower", "p_upper", "recurrence_mean"].map(String::from).to_vec();
    let mut rows = Vec::new();
    let mut all = Vec::new();
    let mut fits = serde_json::Map::new();
    for &m in &cfg.ms {
        let inst = overrides(m, None, cfg.k_max, cfg.delta_enter, cfg.delta_solve, cfg.omega)?;
        let mut per_m = Vec::new();
        for &beta in &cfg.betas {
            let records = run_trials(&inst, beta, cfg.trials, cfg.seed).map_err(|e| match e {
                rrr_core::Error::InvalidArgument(msg) => usage(msg),
                other => other.into(),
            })?;
            let e = entry_probability_from(&records)?;
            rows.push(vec![
                m.to_string(),
                beta.to_string(),
                e.trials.to_string(),
                e.entered.to_string(),
                e.p_hat.to_string(),
                e.lower.to_string(),
                e.upper.to_string(),
                opt(recurrence_mean(&records, cfg.bins, cfg.burn_in)),
            ]);
            per_m.extend(records);
        }
        let fit = match euler_fit(&per_m) {
            Ok(f) => serde_json::to_value(f)?,
            Err(e) => json!({"error": e.to_string()}),
        };
        fits.insert(m.to_string(), fit);
        all.extend(per_m);
    }
    run.write("heatmap.csv", &csv_bytes(&header, &rows)?)?;
    run.write("records.csv", records_csv(&all)?.as_bytes())?;
    run.write("summary.json", &json_bytes(&json!({"euler_fit": fits})))?;
    Ok(Outcome::ok(vec![format!("{} (m, beta) cells, {} records", rows.len(), all.len())]))
}

pub const GOLDEN_CONFIG: &str = include_str!("../golden/config.json");
pub const GOLDEN_MANIFEST: &str = include_str!("../golden/manifest.json");

/// The stored manifest parses, re-serializes byte for byte, and hashes its config.
pub fn check_golden() -> Result<()> {
    let manifest: Manifest = serde_json::from_str(GOLDEN_MANIFEST).context("golden manifest does not parse")?;
    if manifest.to_bytes() != GOLDEN_MANIFEST.as_bytes() {
        bail!("golden manifest does not round-trip byte for byte");
    }
    if sha256_hex(GOLDEN_CONFIG.as_bytes()) != manifest.config_sha256 {
        bail!("golden config hash does not match its manifest");
    }
    let cfg: LedmRunConfig = serde_json::from_str(GOLDEN_CONFIG).context("golden config does not parse")?;
    if to_json(&cfg) != GOLDEN_CONFIG.as_bytes() {
        bail!("golden config does not round-trip byte for byte");
    }
    Ok(())
}

pub fn selftest(cfg: &SelftestConfig, run: &mut Run) -> Result<Outcome> {
    let ids: Vec<u8> = if cfg.criteria.is_empty() { (1..=11).collect() } else { cfg.criteria.clone() };
    if let Some(bad) = ids.iter().find(|&&i| !(1..=11).contains(&i)) {
        return Err(usage(format!("criteria: {bad} is not between 1 and 11")));
    }
    let golden = check_golden();
    let mut summary = vec![match &golden {
        Ok(()) => "[PASS] golden manifest round-trip".to_string(),
        Err(e) => format!("[FAIL] golden manifest round-trip: {e}"),
    }];
    let reports: Vec<_> = ids.iter().filter_map(|&i| criteria::run(i)).collect();
    summary.extend(reports.iter().map(|r| r.to_string()));
    let ok = golden.is_ok() && reports.iter().all(|r| r.passed);
    run.write(
        "selftest.json",
        &json_bytes(&json!({"golden_manifest": golden.is_ok(), "criteria": reports, "passed": ok})),
    )?;
    Ok(Outcome { summary, ok })
}
