//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 1 on
//! failures while running.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::archive::{archive_learn_run, load_archive};
use super::{environment_factory, run_experiment, write_rows, Algorithm, ClassConfig, ExperimentConfig, ExperimentKind};
use crate::bounds::{
    compare_bounds, eta, invert_for_n, pac_confidence, wis_sup_deviation, wis_variance_bound, BoundInputs,
};
use crate::error::{Error, Result};
use crate::learner::LearnConfig;
use crate::policy::{PolicyClassSpec, PolicyParams};

#[derive(Parser, Debug)]
#[command(name = "lrsearch", version, about = "Likelihood-ratio policy search experiments")]
pub struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write results here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Independent runs per grid cell.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Two-armed bandit surfaces over N and p*.
    Bandit(BanditArgs),
    /// Load-unload learning curves per policy class.
    Loadunload(LoadUnloadArgs),
    /// Sample-complexity bounds.
    Bounds(BoundsArgs),
    /// Query an experience archive at a policy.
    Evaluate(EvaluateArgs),
    /// Run an experiment described by a JSON config file.
    Run(RunArgs),
    /// Record the experience of one learning run as an archive.
    Archive(ArchiveArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Problem {
    Ht,
    Hf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgorithmArg {
    Learn,
    Reinforce,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Learn => Algorithm::Learn,
            AlgorithmArg::Reinforce => Algorithm::Reinforce,
        }
    }
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Comma-separated trial budgets.
    #[arg(long = "n", value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Comma-separated exploitation probabilities.
    #[arg(long = "p-star", value_delimiter = ',')]
    p_star: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    algorithm: Option<Vec<AlgorithmArg>>,
    /// Random restarts of the proxy optimizer.
    #[arg(long)]
    restarts: Option<usize>,
    /// Lower probability bound of every policy entry.
    #[arg(long)]
    c_lo: Option<f64>,
    /// Upper probability bound.
    #[arg(long)]
    c_hi: Option<f64>,
}

#[derive(Args, Debug)]
struct BanditArgs {
    #[arg(long, value_enum, default_value = "ht")]
    problem: Problem,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Debug)]
struct LoadUnloadArgs {
    /// Policy classes: `reactive` or a memory size ≥ 2, comma-separated.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    #[arg(long)]
    positions: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[arg(long)]
    v_max: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    delta: f64,
    /// Horizon T.
    #[arg(long = "t")]
    t: u32,
    #[arg(long)]
    c_lo: f64,
    #[arg(long)]
    c_hi: f64,
    /// Covering number N(Θ, ε/8).
    #[arg(long)]
    capacity: f64,
    /// Metric entropy K(Θ) for the comparison table; defaults to ln(capacity).
    #[arg(long)]
    entropy: Option<f64>,
    /// VC dimension for the comparison table; defaults to capacity.
    #[arg(long)]
    vc: Option<f64>,
    /// Emit a table over N = lo, lo+step, ... ≤ hi.
    #[arg(long)]
    sweep_n: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    archive: PathBuf,
    /// Policy file as written by the library (JSON).
    #[arg(long)]
    policy: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct ArchiveArgs {
    #[arg(long, value_enum)]
    experiment: ExperimentArg,
    /// Memory states; 1 for a reactive policy.
    #[arg(long, default_value_t = 1)]
    memory: usize,
    #[arg(long = "n", default_value_t = 20)]
    n: usize,
    #[arg(long = "p-star", default_value_t = 0.5)]
    p_star: f64,
    /// Tabular model file for `custom`.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExperimentArg {
    BanditHt,
    BanditHf,
    LoadUnload,
    Custom,
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                2
            } else {
                1
            }
        }
    }
}

fn output_writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn apply_globals(cfg: &mut ExperimentConfig, cli: &Cli) {
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = cli.runs {
        cfg.runs = r;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if cli.output.is_some() {
        cfg.output = cli.output.clone();
    }
}

fn apply_grid(cfg: &mut ExperimentConfig, grid: &GridArgs) {
    if let Some(n) = &grid.n {
        cfg.n_values = n.clone();
    }
    if let Some(p) = &grid.p_star {
        cfg.p_star = p.clone();
    }
    if let Some(a) = &grid.algorithm {
        cfg.algorithms = a.iter().map(|&x| x.into()).collect();
    }
    if let Some(r) = grid.restarts {
        cfg.optimizer.restarts = r;
    }
    if let Some(lo) = grid.c_lo {
        cfg.bounds.lo = lo;
    }
    if let Some(hi) = grid.c_hi {
        cfg.bounds.hi = hi;
    }
}

fn parse_classes(items: &[String]) -> Result<Vec<ClassConfig>> {
    items
        .iter()
        .map(|s| match s.trim() {
            "reactive" | "1" => Ok(ClassConfig::reactive()),
            other => match other.parse::<usize>() {
                Ok(m) if m >= 2 => Ok(ClassConfig::controller(m)),
                _ => Err(Error::config(format!("unknown policy class '{other}'"))),
            },
        })
        .collect()
}

fn run_and_write(cfg: &ExperimentConfig) -> Result<()> {
    let rows = run_experiment(cfg)?;
    write_rows(output_writer(&cfg.output)?, &rows)
}

fn execute(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Bandit(args) => {
            let kind = match args.problem {
                Problem::Ht => ExperimentKind::BanditHt,
                Problem::Hf => ExperimentKind::BanditHf,
            };
            let mut cfg = ExperimentConfig::new(kind);
            apply_grid(&mut cfg, &args.grid);
            apply_globals(&mut cfg, &cli);
            run_and_write(&cfg)
        }
        Command::Loadunload(args) => {
            let mut cfg = ExperimentConfig::new(ExperimentKind::LoadUnload);
            if let Some(c) = &args.classes {
                cfg.classes = parse_classes(c)?;
            }
            if let Some(p) = args.positions {
                cfg.positions = p;
            }
            if let Some(h) = args.horizon {
                cfg.horizon = h;
            }
            apply_grid(&mut cfg, &args.grid);
            apply_globals(&mut cfg, &cli);
            run_and_write(&cfg)
        }
        Command::Run(args) => {
            let mut cfg = ExperimentConfig::from_path(&args.config).map_err(|e| match e {
                Error::Io(io) => Error::config(format!("{}: {io}", args.config.display())),
                other => other,
            })?;
            apply_globals(&mut cfg, &cli);
            run_and_write(&cfg)
        }
        Command::Bounds(args) => bounds_command(args, &cli),
        Command::Evaluate(args) => evaluate_command(args, &cli),
        Command::Archive(args) => archive_command(args, &cli),
    }
}

#[derive(Serialize)]
struct BoundsRow {
    v_max: f64,
    eps: f64,
    delta: f64,
    horizon: u32,
    c_lo: f64,
    c_hi: f64,
    capacity: f64,
    entropy: f64,
    vc: f64,
    eta: f64,
    required_n: Option<u64>,
    likelihood_ratio_row: f64,
    reusable_trajectories_row: f64,
    row_ratio: f64,
    note: String,
}

#[derive(Serialize)]
struct SweepRow {
    n: u64,
    sup_deviation: f64,
    variance_bound: f64,
    pac_confidence: f64,
}

fn parse_sweep(s: &str) -> Result<(u64, u64, u64)> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Option<Vec<u64>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some(&[lo, hi, step]) if lo >= 1 && lo <= hi && step >= 1 => Ok((lo, hi, step)),
        _ => Err(Error::config(format!("--sweep-n expects lo:hi:step with 1 <= lo <= hi, step >= 1; got '{s}'"))),
    }
}

fn bounds_command(args: &BoundsArgs, cli: &Cli) -> Result<()> {
    let inputs = BoundInputs {
        v_max: args.v_max,
        eps: args.eps,
        delta: args.delta,
        horizon: args.t,
        c_lo: args.c_lo,
        c_hi: args.c_hi,
        capacity: args.capacity,
    };
    inputs.validate()?;
    let mut w = csv::Writer::from_writer(output_writer(&cli.output)?);
    if let Some(s) = &args.sweep_n {
        let (lo, hi, step) = parse_sweep(s)?;
        let e = eta(inputs.c_lo, inputs.c_hi, inputs.horizon);
        let mut n = lo;
        while n <= hi {
            w.serialize(SweepRow {
                n,
                sup_deviation: wis_sup_deviation(inputs.v_max, inputs.c_lo, inputs.c_hi, inputs.horizon, n),
                variance_bound: wis_variance_bound(inputs.v_max, e, n),
                pac_confidence: pac_confidence(&inputs, n)?,
            })?;
            n = match n.checked_add(step) {
                Some(next) => next,
                None => break,
            };
        }
    } else {
        let entropy = args.entropy.unwrap_or(inputs.capacity.ln());
        let vc = args.vc.unwrap_or(inputs.capacity);
        let cmp = compare_bounds(&inputs, entropy, vc)?;
        let required_n = match invert_for_n(&inputs) {
            Ok(n) => Some(n),
            Err(Error::Infeasible(_)) => None,
            Err(e) => return Err(e),
        };
        let mut note = "order-of-magnitude, constants as printed".to_string();
        if cmp.horizon_advisory {
            note.push_str("; reusable-trajectories row needs T >= 2");
        }
        w.serialize(BoundsRow {
            v_max: inputs.v_max,
            eps: inputs.eps,
            delta: inputs.delta,
            horizon: inputs.horizon,
            c_lo: inputs.c_lo,
            c_hi: inputs.c_hi,
            capacity: inputs.capacity,
            entropy,
            vc,
            eta: inputs.eta(),
            required_n,
            likelihood_ratio_row: cmp.likelihood_ratio,
            reusable_trajectories_row: cmp.reusable_trajectories,
            row_ratio: cmp.ratio,
            note,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EstimateOut {
    value: f64,
    gradient: Vec<f64>,
    effective_sample_size: f64,
}

#[derive(Serialize)]
struct EvaluateOut {
    records: usize,
    wis: EstimateOut,
    /// Absent when every importance weight vanished.
    is: Option<EstimateOut>,
}

fn evaluate_command(args: &EvaluateArgs, cli: &Cli) -> Result<()> {
    let archive = load_archive(&args.archive)?;
    let text = std::fs::read_to_string(&args.policy)
        .map_err(|e| Error::config(format!("{}: {e}", args.policy.display())))?;
    let policy = PolicyParams::from_json(&text)?;
    let data = &archive.dataset;
    let wis = data.evaluate_wis(&policy)?;
    let is = match data.evaluate_is(&policy) {
        Ok(e) => Some(e),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let out = EvaluateOut {
        records: data.len(),
        wis: EstimateOut {
            value: wis.value,
            gradient: wis.gradient,
            effective_sample_size: wis.effective_sample_size,
        },
        is: is.map(|e| EstimateOut {
            value: e.value,
            gradient: e.gradient,
            effective_sample_size: e.effective_sample_size,
        }),
    };
    let mut w = output_writer(&cli.output)?;
    serde_json::to_writer_pretty(&mut w, &out)?;
    writeln!(w)?;
    Ok(())
}

fn archive_command(args: &ArchiveArgs, cli: &Cli) -> Result<()> {
    let kind = match args.experiment {
        ExperimentArg::BanditHt => ExperimentKind::BanditHt,
        ExperimentArg::BanditHf => ExperimentKind::BanditHf,
        ExperimentArg::LoadUnload => ExperimentKind::LoadUnload,
        ExperimentArg::Custom => ExperimentKind::Custom,
    };
    let path = cli
        .output
        .clone()
        .ok_or_else(|| Error::config("archive needs --output"))?;
    let mut cfg = ExperimentConfig::new(kind);
    cfg.model = args.model.clone();
    let mut env = environment_factory(&cfg)?()?;
    let bounds = cfg.bounds;
    let spec = if args.memory <= 1 {
        PolicyClassSpec::reactive(env.num_observations(), env.num_actions(), bounds)?
    } else {
        PolicyClassSpec::controller(env.num_observations(), env.num_actions(), args.memory, bounds)?
    };
    let learn_cfg = LearnConfig::new(args.n, args.p_star, cli.seed.unwrap_or(0));
    archive_learn_run(env.as_mut(), &spec, &learn_cfg, &path)?;
    Ok(())
}
