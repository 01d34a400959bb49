mod commands;
mod config;
mod store;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::*;
use store::{resolve_out_dir, verify_run, write_standalone, ResultStore};

#[derive(Parser)]
#[command(name = "rrr", version, about = "Reflect-Reflect-Relax flow laboratory")]
struct Cli {
    /// Directory that receives run folders (else $RRR_OUT_DIR, else ./rrr-runs).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// JSON configuration; flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct InstanceArgs {
    /// Catalog instance name.
    #[arg(long)]
    instance: Option<String>,
    /// Angle in degrees for the angle-parametrized instances.
    #[arg(long)]
    theta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Spectrum and principal angles of the flow Jacobian at a feasible point.
    Linearize {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Option<Vec<f64>>,
    },
    /// Integrate the flow (or record RRR iterates with --eps).
    Flow {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<ModeChoice>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Compare discrete and continuous hitting times of the gap threshold.
    Hitting {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Cells, interfaces, and descent chain of a finite-set instance.
    Wdomain {
        #[command(flatten)]
        inst: InstanceArgs,
        /// Start cell as `a,b`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        start: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Monte Carlo transition kernel and order parameter over a beta grid.
    Meso {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Low-rank matrix factorization experiments.
    #[command(subcommand)]
    Ledm(LedmCommand),
    /// Run the acceptance checks.
    Selftest {
        /// Criteria to run; all when omitted.
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<u8>>,
    },
    /// Recheck every hash recorded in a run directory.
    Verify { dir: PathBuf },
}

#[derive(Subcommand)]
enum LedmCommand {
    /// Independent trials at one (m, beta).
    Run {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        /// Also write the records CSV here (never overwritten).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Entry probabilities over an (m, beta) grid.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        ms: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn apply_instance(cfg: &mut InstanceConfig, args: InstanceArgs) {
    cfg.set_name(args.instance, args.theta);
}

fn execute(cli: Cli) -> Result<bool> {
    let cfg_path = cli.config.as_deref();
    let seed = cli.seed;
    let store = || ResultStore::open(resolve_out_dir(cli.out_dir.as_deref()));
    let (name, outcome, dir) = match cli.command {
        Command::Verify { dir } => {
            let m = verify_run(&dir)?;
            println!("{}: {} files verified ({} run)", dir.display(), m.files.len(), m.command);
            return Ok(true);
        }
        Command::Linearize { inst, point } => {
            let mut c: LinearizeConfig = load(cfg_path)?;
            apply_instance(&mut c.instance, inst);
            set_opt(&mut c.point, point);
            set(&mut c.seed, seed);
            let mut run = store()?.begin("linearize", &to_json(&c))?;
            let o = commands::linearize(&c, &mut run)?;
            ("linearize", o, run.finish()?)
        }
        Command::Flow { inst, x0, t_end, mode, eps } => {
            let mut c: FlowConfig = load(cfg_path)?;
            apply_instance(&mut c.instance, inst);
            set_opt(&mut c.x0, x0);
            set(&mut c.t_end, t_end);
            set(&mut c.mode, mode);
            set_opt(&mut c.eps, eps);
            set(&mut c.seed, seed);
            let mut run = store()?.begin("flow", &to_json(&c))?;
            let o = commands::flow(&c, &mut run)?;
            ("flow", o, run.finish()?)
        }
        Command::Hitting { inst, x0, delta, eps, k_max } => {
            let mut c: HittingConfig = load(cfg_path)?;
            apply_instance(&mut c.instance, inst);
            set_opt(&mut c.x0, x0);
            set(&mut c.delta, delta);
            set(&mut c.eps, eps);
            set(&mut c.k_max, k_max);
            set(&mut c.seed, seed);
            let mut run = store()?.begin("hitting", &to_json(&c))?;
            let o = commands::hitting(&c, &mut run)?;
            ("hitting", o, run.finish()?)
        }
        Command::Wdomain { inst, start, x0, t_end } => {
            let mut c: WdomainConfig = load(cfg_path)?;
            apply_instance(&mut c.instance, inst);
            set_opt(&mut c.start, start.map(|s| (s[0], s[1])));
            set_opt(&mut c.x0, x0);
            set(&mut c.t_end, t_end);
            set(&mut c.seed, seed);
            let mut run = store()?.begin("wdomain", &to_json(&c))?;
            let o = commands::wdomain(&c, &mut run)?;
            ("wdomain", o, run.finish()?)
        }
        Command::Meso { inst, betas, samples, tau } => {
            let mut c: MesoConfig = load(cfg_path)?;
            apply_instance(&mut c.instance, inst);
            set(&mut c.betas, betas);
            set(&mut c.samples, samples);
            set(&mut c.tau, tau);
            set(&mut c.seed, seed);
            let mut run = store()?.begin("meso", &to_json(&c))?;
            let o = commands::meso(&c, &mut run)?;
            ("meso", o, run.finish()?)
        }
        Command::Ledm(LedmCommand::Run { m, beta, trials, k_max, out }) => {
            let mut c: LedmRunConfig = load(cfg_path)?;
            set(&mut c.m, m);
            set(&mut c.beta, beta);
            set(&mut c.trials, trials);
            set(&mut c.k_max, k_max);
            set(&mut c.seed, seed);
            if let Some(p) = &out {
                if p.exists() {
                    return Err(usage(format!("{} already exists; refusing to overwrite", p.display())));
                }
            }
            let config = to_json(&c);
            let mut run = store()?.begin("ledm-run", &config)?;
            let (o, csv) = commands::ledm_run(&c, &mut run)?;
            let dir = run.finish()?;
            if let Some(p) = &out {
                write_standalone(p, &csv, "ledm-run", &config)?;
            }
            ("ledm run", o, dir)
        }
        Command::Ledm(LedmCommand::Sweep { ms, betas, trials, k_max }) => {
            let mut c: LedmSweepConfig = load(cfg_path)?;
            set(&mut c.ms, ms);
            set(&mut c.betas, betas);
            set(&mut c.trials, trials);
            set(&mut c.k_max, k_max);
            set(&mut c.seed, seed);
            let mut run = store()?.begin("ledm-sweep", &to_json(&c))?;
            let o = commands::ledm_sweep(&c, &mut run)?;
            ("ledm sweep", o, run.finish()?)
        }
        Command::Selftest { criteria } => {
            let mut c: SelftestConfig = load(cfg_path)?;
            set(&mut c.criteria, criteria);
            set(&mut c.seed, seed);
            let mut run = store()?.begin("selftest", &to_json(&c))?;
            let o = commands::selftest(&c, &mut run)?;
            ("selftest", o, run.finish()?)
        }
    };
    for line in &outcome.summary {
        println!("{line}");
    }
    println!("{name}: results in {}", display(&dir));
    Ok(outcome.ok)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
