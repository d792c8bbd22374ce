//! Experiment driver: grids of learning runs scored by true policy value.
//!
//! An experiment is a set of curves, one per (policy class, algorithm,
//! p_star). Every curve is evaluated at each N of the grid, averaged over
//! `runs` independent seeded runs. A run with N trials is a prefix of the run
//! with more trials under the same seed, so by default each (curve, run) unit
//! executes once with the largest N and is read off at every checkpoint.
//!
//! # Config file
//!
//! JSON object; every key except `experiment` is optional:
//!
//! ```json
//! {
//!   "experiment": "load-unload",
//!   "n_values": [10, 100, 1000],
//!   "p_star": [0.5],
//!   "runs": 80,
//!   "classes": [{"kind": "reactive"}, {"kind": "controller", "memory_states": 2}],
//!   "algorithms": ["learn", "reinforce"],
//!   "base_seed": 1,
//!   "bounds": {"lo": 0.1, "hi": 0.9},
//!   "positions": 5,
//!   "horizon": 100,
//!   "model": "path/to/model.json",
//!   "mc_rollouts": 1000,
//!   "optimizer": {"restarts": 4},
//!   "reinforce": {"step_size": 0.001},
//!   "share_prefixes": true,
//!   "threads": 1,
//!   "output": "out.csv"
//! }
//! ```
//!
//! `experiment` is one of `bandit-ht`, `bandit-hf`, `load-unload`, `custom`
//! (a tabular model read from `model`). Omitted keys take the values shown
//! by [`ExperimentConfig`]'s serde defaults for every experiment kind; the
//! per-experiment defaults of [`ExperimentConfig::new`] apply only to the
//! `bandit` and `loadunload` subcommands.
//!
//! # Output
//!
//! CSV with header
//! `experiment,policy_class,memory,n,p_star,algorithm,mean_value,std_error,runs,base_seed,scoring`.
//! `std_error` is the sample standard deviation over runs divided by
//! `sqrt(runs)` (0 for a single run). `scoring` is `exact` or
//! `monte-carlo:<rollouts>`.

pub mod archive;
pub mod cli;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{
    exact_value, make_load_unload, make_tabular, sample, Action, Bandit, EnvModel, Environment, Observation, Transition,
};
use crate::error::{Error, Result};
use crate::learner::{learn, reinforce, LearnConfig, OptimizerConfig, ReinforceConfig};
use crate::policy::{PolicyBounds, PolicyClassSpec, PolicyKind, PolicyParams};
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BanditHt,
    BanditHf,
    LoadUnload,
    Custom,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::BanditHt => "bandit-ht",
            ExperimentKind::BanditHf => "bandit-hf",
            ExperimentKind::LoadUnload => "load-unload",
            ExperimentKind::Custom => "custom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Learn,
    Reinforce,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Learn => "learn",
            Algorithm::Reinforce => "reinforce",
        }
    }
}

/// Policy class of one curve. `memory_states` is ignored for reactive classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassConfig {
    pub kind: PolicyKind,
    #[serde(default = "one")]
    pub memory_states: usize,
}

fn one() -> usize {
    1
}

impl ClassConfig {
    pub fn reactive() -> Self {
        ClassConfig {
            kind: PolicyKind::Reactive,
            memory_states: 1,
        }
    }

    pub fn controller(memory_states: usize) -> Self {
        ClassConfig {
            kind: PolicyKind::Controller,
            memory_states,
        }
    }

    pub fn memory(&self) -> usize {
        match self.kind {
            PolicyKind::Reactive => 1,
            PolicyKind::Controller => self.memory_states,
        }
    }

    fn label(&self) -> &'static str {
        match self.kind {
            PolicyKind::Reactive => "reactive",
            PolicyKind::Controller => "controller",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_n_values")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_p_star")]
    pub p_star: Vec<f64>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub classes: Vec<ClassConfig>,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub bounds: PolicyBounds,
    #[serde(default = "default_positions")]
    pub positions: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_mc_rollouts")]
    pub mc_rollouts: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub reinforce: ReinforceConfig,
    #[serde(default = "default_true")]
    pub share_prefixes: bool,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_n_values() -> Vec<usize> {
    vec![10, 30, 100]
}

fn default_p_star() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}

fn default_runs() -> usize {
    100
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Learn]
}

fn default_positions() -> usize {
    5
}

fn default_horizon() -> usize {
    100
}

fn default_mc_rollouts() -> usize {
    1000
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Defaults for `experiment`: bandits use the reactive class, load-unload
    /// the reactive class plus 2- and 3-state controllers at p_star 0.5.
    pub fn new(experiment: ExperimentKind) -> Self {
        let mut cfg: ExperimentConfig =
            serde_json::from_value(serde_json::json!({ "experiment": experiment })).expect("defaults deserialize");
        if experiment == ExperimentKind::LoadUnload {
            cfg.classes = vec![ClassConfig::reactive(), ClassConfig::controller(2), ClassConfig::controller(3)];
            cfg.p_star = vec![0.5];
            cfg.n_values = vec![10, 50, 100, 200];
            cfg.runs = 10;
        }
        cfg
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::config("runs must be at least 1"));
        }
        if self.n_values.is_empty() || self.p_star.is_empty() || self.algorithms.is_empty() {
            return Err(Error::config("N grid, p_star list and algorithm list must be non-empty"));
        }
        if self.n_values.contains(&0) {
            return Err(Error::config("N values must be at least 1"));
        }
        if let Some(p) = self.p_star.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::config(format!("p_star {p} outside [0, 1]")));
        }
        for c in &self.classes {
            if c.kind == PolicyKind::Controller && c.memory_states < 2 {
                return Err(Error::config("controller classes need at least 2 memory states"));
            }
        }
        if self.mc_rollouts == 0 {
            return Err(Error::config("mc_rollouts must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads must be at least 1"));
        }
        if self.experiment == ExperimentKind::Custom && self.model.is_none() {
            return Err(Error::config("custom experiments need a model file"));
        }
        PolicyBounds::new(self.bounds.lo, self.bounds.hi)?;
        Ok(())
    }

    /// Classes of the experiment; reactive only when none are listed.
    pub fn effective_classes(&self) -> Vec<ClassConfig> {
        if self.classes.is_empty() {
            vec![ClassConfig::reactive()]
        } else {
            self.classes.clone()
        }
    }

    /// Curves in output order: class, then algorithm, then p_star.
    /// The index of a curve in this list seeds its runs.
    pub fn curves(&self) -> Vec<Curve> {
        let mut out = Vec::new();
        for class in self.effective_classes() {
            for &algorithm in &self.algorithms {
                for &p_star in &self.p_star {
                    out.push(Curve {
                        class,
                        algorithm,
                        p_star,
                    });
                }
            }
        }
        out
    }

    /// N values sorted ascending without duplicates.
    pub fn n_grid(&self) -> Vec<usize> {
        let mut n = self.n_values.clone();
        n.sort_unstable();
        n.dedup();
        n
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Curve {
    pub class: ClassConfig,
    pub algorithm: Algorithm,
    pub p_star: f64,
}

/// Builds a fresh environment instance per run.
pub type EnvFactory<'a> = dyn Fn() -> Result<Box<dyn Environment>> + Sync + 'a;

/// Factory for the built-in experiments.
pub fn environment_factory(cfg: &ExperimentConfig) -> Result<Box<EnvFactory<'static>>> {
    Ok(match cfg.experiment {
        ExperimentKind::BanditHt => Box::new(|| Ok(Box::new(Bandit::hidden_treasure()) as Box<dyn Environment>)),
        ExperimentKind::BanditHf => Box::new(|| Ok(Box::new(Bandit::hidden_failure()) as Box<dyn Environment>)),
        ExperimentKind::LoadUnload => {
            let (n, t) = (cfg.positions, cfg.horizon);
            make_load_unload(n, t)?;
            Box::new(move || Ok(Box::new(make_load_unload(n, t)?) as Box<dyn Environment>))
        }
        ExperimentKind::Custom => {
            let path = cfg.model.as_ref().ok_or_else(|| Error::config("custom experiments need a model file"))?;
            let model = EnvModel::from_path(path)?;
            Box::new(move || Ok(Box::new(make_tabular(model.clone())?) as Box<dyn Environment>))
        }
    })
}

/// Environment wrapper counting completed resets, i.e. trials started.
pub struct CountingEnv<E> {
    inner: E,
    trials: usize,
}

impl<E: Environment> CountingEnv<E> {
    pub fn new(inner: E) -> Self {
        CountingEnv { inner, trials: 0 }
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Environment> Environment for CountingEnv<E> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn num_observations(&self) -> usize {
        self.inner.num_observations()
    }

    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation {
        self.trials += 1;
        self.inner.reset(rng)
    }

    fn step(&mut self, action: Action, rng: &mut dyn RngCore) -> Transition {
        self.inner.step(action, rng)
    }

    fn model(&self) -> Option<EnvModel> {
        self.inner.model()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub policy_class: String,
    pub memory: usize,
    pub n: usize,
    pub p_star: f64,
    pub algorithm: String,
    pub mean_value: f64,
    pub std_error: f64,
    pub runs: usize,
    pub base_seed: u64,
    pub scoring: String,
}

/// Result of one (curve, run) unit: true value and environment trials used
/// at each checkpoint of the N grid.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitResult {
    pub values: Vec<f64>,
    pub trials: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scoring {
    Exact,
    MonteCarlo(usize),
}

impl Scoring {
    fn label(self) -> String {
        match self {
            Scoring::Exact => "exact".to_string(),
            Scoring::MonteCarlo(n) => format!("monte-carlo:{n}"),
        }
    }
}

/// Stream index reserved for Monte Carlo scoring rollouts.
const SCORING_STREAM: u64 = 1 << 32;

fn score(env: &mut dyn Environment, model: Option<&EnvModel>, policy: &PolicyParams, rollouts: usize, seed: u64) -> Result<(f64, Scoring)> {
    if let Some(m) = model {
        match exact_value(m, policy) {
            Ok(v) => return Ok((v, Scoring::Exact)),
            Err(Error::Capacity(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let mut rng = seeded(seed);
    let mut total = 0.0;
    for _ in 0..rollouts {
        total += sample(env, policy, &mut rng)?.0;
    }
    Ok((total / rollouts as f64, Scoring::MonteCarlo(rollouts)))
}

fn class_spec(env: &dyn Environment, class: &ClassConfig, bounds: PolicyBounds) -> Result<PolicyClassSpec> {
    match class.kind {
        PolicyKind::Reactive => PolicyClassSpec::reactive(env.num_observations(), env.num_actions(), bounds),
        PolicyKind::Controller => {
            PolicyClassSpec::controller(env.num_observations(), env.num_actions(), class.memory_states, bounds)
        }
    }
}

/// Runs one curve once and scores the best guess at each checkpoint
/// `(grid index, n)`; checkpoints ascend in `n`. The grid index selects the
/// Monte Carlo scoring stream.
fn run_unit(
    cfg: &ExperimentConfig,
    factory: &EnvFactory<'_>,
    curve: &Curve,
    seed: u64,
    checkpoints: &[(usize, usize)],
) -> Result<(UnitResult, Scoring)> {
    let trials = checkpoints.last().expect("non-empty grid").1;
    let mut env = CountingEnv::new(factory()?);
    let spec = class_spec(&env, &curve.class, cfg.bounds)?;
    let learn_cfg = LearnConfig {
        trials,
        p_star: curve.p_star,
        optimizer: cfg.optimizer,
        reinforce: cfg.reinforce,
        seed,
    };
    let outcome = match curve.algorithm {
        Algorithm::Learn => learn(&mut env, &spec, &learn_cfg)?,
        Algorithm::Reinforce => reinforce(&mut env, &spec, &learn_cfg)?,
    };
    if env.trials() != trials {
        return Err(Error::contract(format!("run used {} trials, budget {trials}", env.trials())));
    }
    let model = env.model();
    let mut values = Vec::with_capacity(checkpoints.len());
    let mut scoring = Scoring::Exact;
    for &(k, n) in checkpoints {
        let policy = outcome.trace.best_after(n).expect("checkpoint within run");
        let (v, s) = score(
            &mut env.inner,
            model.as_ref(),
            policy,
            cfg.mc_rollouts,
            derive_seed(seed, SCORING_STREAM, k as u64),
        )?;
        values.push(v);
        scoring = s;
    }
    Ok((
        UnitResult {
            values,
            trials: checkpoints.iter().map(|&(_, n)| n).collect(),
        },
        scoring,
    ))
}

/// Unit results for every (curve, run), indexed `[curve][run]`.
pub fn run_units(cfg: &ExperimentConfig, factory: &EnvFactory<'_>) -> Result<Vec<Vec<UnitResult>>> {
    Ok(run_units_scored(cfg, factory)?.0)
}

fn run_units_scored(cfg: &ExperimentConfig, factory: &EnvFactory<'_>) -> Result<(Vec<Vec<UnitResult>>, Vec<Scoring>)> {
    cfg.validate()?;
    let curves = cfg.curves();
    let grid: Vec<(usize, usize)> = cfg.n_grid().into_iter().enumerate().collect();
    let units: Vec<(usize, usize)> = (0..curves.len())
        .flat_map(|c| (0..cfg.runs).map(move |r| (c, r)))
        .collect();
    let work = |&(c, r): &(usize, usize)| -> Result<(UnitResult, Scoring)> {
        let seed = derive_seed(cfg.base_seed, c as u64, r as u64);
        if cfg.share_prefixes {
            return run_unit(cfg, factory, &curves[c], seed, &grid);
        }
        let mut merged = UnitResult {
            values: Vec::with_capacity(grid.len()),
            trials: Vec::with_capacity(grid.len()),
        };
        let mut scoring = Scoring::Exact;
        for point in &grid {
            let (u, s) = run_unit(cfg, factory, &curves[c], seed, std::slice::from_ref(point))?;
            merged.values.extend(u.values);
            merged.trials.extend(u.trials);
            scoring = s;
        }
        Ok((merged, scoring))
    };
    let results: Vec<Result<(UnitResult, Scoring)>> = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(|| units.par_iter().map(work).collect()),
        None => units.iter().map(work).collect(),
    };
    let mut by_curve: Vec<Vec<UnitResult>> = vec![Vec::with_capacity(cfg.runs); curves.len()];
    let mut scoring = vec![Scoring::Exact; curves.len()];
    for (&(c, _), res) in units.iter().zip(results) {
        let (u, s) = res?;
        by_curve[c].push(u);
        scoring[c] = s;
    }
    Ok((by_curve, scoring))
}

/// Mean and standard error (sample standard deviation over `sqrt(len)`).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs the experiment with a caller-supplied environment factory.
pub fn run_experiment_with(cfg: &ExperimentConfig, factory: &EnvFactory<'_>) -> Result<Vec<ResultRow>> {
    let (units, scoring) = run_units_scored(cfg, factory)?;
    let grid = cfg.n_grid();
    let mut rows = Vec::new();
    for ((curve, runs), scoring) in cfg.curves().iter().zip(&units).zip(scoring) {
        for (k, &n) in grid.iter().enumerate() {
            let values: Vec<f64> = runs.iter().map(|u| u.values[k]).collect();
            let (mean_value, std_error) = mean_and_std_error(&values);
            rows.push(ResultRow {
                experiment: cfg.experiment.as_str().to_string(),
                policy_class: curve.class.label().to_string(),
                memory: curve.class.memory(),
                n,
                p_star: curve.p_star,
                algorithm: curve.algorithm.as_str().to_string(),
                mean_value,
                std_error,
                runs: cfg.runs,
                base_seed: cfg.base_seed,
                scoring: scoring.label(),
            });
        }
    }
    Ok(rows)
}

/// Runs a built-in or tabular experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let factory = environment_factory(cfg)?;
    run_experiment_with(cfg, factory.as_ref())
}

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "experiment",
            "policy_class",
            "memory",
            "n",
            "p_star",
            "algorithm",
            "mean_value",
            "std_error",
            "runs",
            "base_seed",
            "scoring",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn read_rows(csv_text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
