//! Policy search against the proxy.
//!
//! [`learn`] alternates four steps for each allowed trial: pick a policy to
//! try, run it once in the real environment, archive the result, and fully
//! re-optimize the best guess on the WIS estimate of the whole archive.
//! [`reinforce`] is the same loop with every step degraded: it always samples
//! the current guess, keeps only the latest trial, and takes one small
//! gradient step on the IS estimate.

use std::io::Write;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::{exact_value, sample, EnvModel, Environment};
use crate::error::{Error, Result};
use crate::estimator::{Dataset, SampleRecord};
use crate::policy::{PolicyClassSpec, PolicyParams};
use crate::rng::seeded;

/// Projected gradient ascent settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Largest coordinate move of the first trial step from each start.
    pub initial_step: f64,
    /// Stop when `‖P(θ + ∇V) - θ‖∞` falls below this.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step gains less than this.
    pub improvement_tolerance: f64,
    /// Random starting points in addition to the current guess and the
    /// best-returning archived policy.
    pub restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 500,
            initial_step: 0.25,
            gradient_tolerance: 1e-6,
            improvement_tolerance: 1e-9,
            restarts: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReinforceConfig {
    pub step_size: f64,
    /// When set, step `k` uses `step_size / (1 + k / decay)`.
    pub decay: Option<f64>,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        ReinforceConfig {
            step_size: 1e-3,
            decay: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    /// Environment trials allowed.
    pub trials: usize,
    /// Probability of sampling the current best guess instead of a random policy.
    pub p_star: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub reinforce: ReinforceConfig,
    pub seed: u64,
}

impl LearnConfig {
    pub fn new(trials: usize, p_star: f64, seed: u64) -> Self {
        LearnConfig {
            trials,
            p_star,
            optimizer: OptimizerConfig::default(),
            reinforce: ReinforceConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("at least one trial is required"));
        }
        if !(0.0..=1.0).contains(&self.p_star) {
            return Err(Error::config(format!("p_star {} outside [0, 1]", self.p_star)));
        }
        let o = &self.optimizer;
        if !(o.initial_step > 0.0 && o.initial_step.is_finite()) {
            return Err(Error::config("optimizer initial_step must be positive"));
        }
        if !(self.reinforce.step_size >= 0.0 && self.reinforce.step_size.is_finite()) {
            return Err(Error::config("reinforce step_size must be non-negative"));
        }
        if matches!(self.reinforce.decay, Some(d) if d.is_nan() || d <= 0.0) {
            return Err(Error::config("reinforce decay must be positive"));
        }
        Ok(())
    }
}

/// One iteration of a learning run.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// The sampled policy was the current best guess.
    pub exploited: bool,
    pub sampled: PolicyParams,
    pub ret: f64,
    /// Best guess after this iteration.
    pub best: PolicyParams,
    /// Proxy estimate of `best`.
    pub proxy_value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearnTrace {
    pub entries: Vec<TraceEntry>,
}

impl LearnTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Best guess after `n` trials (`n >= 1`).
    pub fn best_after(&self, n: usize) -> Option<&PolicyParams> {
        n.checked_sub(1).and_then(|i| self.entries.get(i)).map(|e| &e.best)
    }

    /// CSV with columns `iteration,exploited,return,proxy_value,exact_value`;
    /// `exact_value` is empty without a model.
    pub fn write_csv<W: Write>(&self, out: W, model: Option<&EnvModel>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "exploited", "return", "proxy_value", "exact_value"])?;
        for e in &self.entries {
            let exact = match model {
                Some(m) => exact_value(m, &e.best)?.to_string(),
                None => String::new(),
            };
            w.write_record([
                e.iteration.to_string(),
                e.exploited.to_string(),
                e.ret.to_string(),
                e.proxy_value.to_string(),
                exact,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LearnOutcome {
    pub policy: PolicyParams,
    pub trace: LearnTrace,
    /// Experience retained at the end of the run.
    pub dataset: Dataset,
}

/// With probability `p_star` returns the current best guess, otherwise a
/// uniformly random policy. The flag reports which.
pub fn pick_sample<R: RngCore + ?Sized>(
    data: &Dataset,
    best: &PolicyParams,
    p_star: f64,
    rng: &mut R,
) -> (PolicyParams, bool) {
    let exploit = rng.random::<f64>() < p_star;
    if exploit {
        (best.clone(), true)
    } else {
        (PolicyParams::random(data.spec(), rng), false)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn step_from(theta: &PolicyParams, direction: &[f64], scale: f64) -> Result<PolicyParams> {
    let moved = theta
        .params()
        .iter()
        .zip(direction)
        .map(|(p, g)| p + scale * g)
        .collect();
    PolicyParams::from_flat_unchecked(*theta.spec(), moved)?.project()
}

/// Projected gradient ascent on the WIS estimate from one starting point.
/// Returns the final policy and its estimated value.
pub fn ascend(data: &Dataset, start: &PolicyParams, cfg: &OptimizerConfig) -> Result<(PolicyParams, f64)> {
    let mut theta = start.clone();
    let mut est = data.evaluate_wis(&theta)?;
    let mut value = est.value;
    let mut alpha = cfg.initial_step / max_abs(&est.gradient).max(f64::MIN_POSITIVE);
    for _ in 0..cfg.max_iterations {
        let g = &est.gradient;
        let g_norm = max_abs(g);
        if g_norm == 0.0 {
            break;
        }
        let unit = step_from(&theta, g, 1.0)?;
        let pg = unit
            .params()
            .iter()
            .zip(theta.params())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if pg < cfg.gradient_tolerance {
            break;
        }
        let accepted = loop {
            let cand = step_from(&theta, g, alpha)?;
            let point = data.wis_point(&cand)?;
            if point.value >= value {
                break Some((cand, point));
            }
            alpha *= 0.5;
            if alpha * g_norm < 1e-15 {
                break None;
            }
        };
        let Some((cand, point)) = accepted else { break };
        let gain = point.value - value;
        est = data.wis_estimate(&cand, &point);
        theta = cand;
        value = est.value;
        alpha *= 2.0;
        if gain < cfg.improvement_tolerance {
            break;
        }
    }
    Ok((theta, value))
}

/// Maximizes the WIS estimate over the policy class.
///
/// Ascends from `init`, from `cfg.restarts` random policies and from the
/// archived sampling policy with the highest return, then keeps the best
/// result (earliest candidate on ties). Never returns a policy the proxy
/// rates below `init`.
pub fn optimize<R: RngCore + ?Sized>(
    data: &Dataset,
    init: &PolicyParams,
    cfg: &OptimizerConfig,
    rng: &mut R,
) -> Result<PolicyParams> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut starts = Vec::with_capacity(cfg.restarts + 2);
    starts.push(init.clone());
    for _ in 0..cfg.restarts {
        starts.push(PolicyParams::random(data.spec(), rng));
    }
    if let Some(rec) = data.best_record() {
        starts.push(rec.policy().clone());
    }
    let mut best: Option<(PolicyParams, f64)> = None;
    for s in &starts {
        let (theta, v) = ascend(data, s, cfg)?;
        if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
            best = Some((theta, v));
        }
    }
    let (theta, v) = best.expect("at least one start");
    debug_assert!(v >= data.evaluate_wis_value(init)?);
    Ok(theta)
}

/// Runs the sample / archive / optimize loop for `cfg.trials` trials.
///
/// Uses exactly `cfg.trials` environment trials; optimization only queries
/// the archive.
pub fn learn<E: Environment + ?Sized>(env: &mut E, spec: &PolicyClassSpec, cfg: &LearnConfig) -> Result<LearnOutcome> {
    cfg.validate()?;
    spec.validate()?;
    let mut rng = seeded(cfg.seed);
    let mut best = PolicyParams::random(spec, &mut rng);
    let mut data = Dataset::new(*spec);
    let mut trace = LearnTrace::default();
    for iteration in 1..=cfg.trials {
        let (theta, exploited) = pick_sample(&data, &best, cfg.p_star, &mut rng);
        let (ret, history) = sample(env, &theta, &mut rng)?;
        data.add(SampleRecord::new(theta.clone(), ret, history)?)?;
        best = optimize(&data, &best, &cfg.optimizer, &mut rng)?;
        let proxy_value = data.evaluate_wis_value(&best)?;
        trace.entries.push(TraceEntry {
            iteration,
            exploited,
            sampled: theta,
            ret,
            best: best.clone(),
            proxy_value,
        });
    }
    Ok(LearnOutcome {
        policy: best,
        trace,
        dataset: data,
    })
}

/// REINFORCE in the same loop: sample the current guess, forget everything
/// but that trial, and take one projected step along `R · ∇ln Φ(h | θ)`.
pub fn reinforce<E: Environment + ?Sized>(
    env: &mut E,
    spec: &PolicyClassSpec,
    cfg: &LearnConfig,
) -> Result<LearnOutcome> {
    cfg.validate()?;
    spec.validate()?;
    let mut rng = seeded(cfg.seed);
    let mut best = PolicyParams::random(spec, &mut rng);
    let mut data = Dataset::new(*spec);
    let mut trace = LearnTrace::default();
    for iteration in 1..=cfg.trials {
        let theta = best.clone();
        let (ret, history) = sample(env, &theta, &mut rng)?;
        data.clear();
        data.add(SampleRecord::new(theta.clone(), ret, history)?)?;
        let est = data.evaluate_is(&best)?;
        let k = (iteration - 1) as f64;
        let alpha = match cfg.reinforce.decay {
            Some(tau) => cfg.reinforce.step_size / (1.0 + k / tau),
            None => cfg.reinforce.step_size,
        };
        if est.gradient.iter().any(|&g| g != 0.0) {
            best = step_from(&best, &est.gradient, alpha)?;
        }
        let proxy_value = data.evaluate_is(&best)?.value;
        trace.entries.push(TraceEntry {
            iteration,
            exploited: true,
            sampled: theta,
            ret,
            best: best.clone(),
            proxy_value,
        });
    }
    Ok(LearnOutcome {
        policy: best,
        trace,
        dataset: data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_tabular, Action, Bandit, EnvModel, History, Observation, RewardEntry, Step};
    use crate::policy::PolicyBounds;
    use crate::rng::seeded;

    fn bandit_spec() -> PolicyClassSpec {
        PolicyClassSpec::reactive(1, 2, PolicyBounds::default()).unwrap()
    }

    fn pol(p: f64) -> PolicyParams {
        PolicyParams::new(bandit_spec(), vec![p, 1.0 - p]).unwrap()
    }

    fn pull(a: usize, r: f64) -> History {
        History::from_steps(
            1,
            2,
            None,
            [Step { obs: Observation(0), action: Action(a), reward: r, memory: None }],
        )
        .unwrap()
    }

    #[test]
    fn p_star_extremes() {
        let data = Dataset::new(bandit_spec());
        let best = pol(0.42);
        let mut rng = seeded(3);
        for _ in 0..200 {
            assert_eq!(pick_sample(&data, &best, 1.0, &mut rng), (best.clone(), true));
            let (p, exploited) = pick_sample(&data, &best, 0.0, &mut rng);
            assert!(!exploited);
            assert_ne!(p, best);
        }
    }

    #[test]
    fn single_sample_leaves_init_unchanged() {
        let mut data = Dataset::new(bandit_spec());
        data.add(SampleRecord::new(pol(0.3), 4.0, pull(0, 4.0)).unwrap()).unwrap();
        let init = pol(0.77);
        let out = optimize(&data, &init, &OptimizerConfig::default(), &mut seeded(1)).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn optimizer_never_loses_proxy_value() {
        let mut data = Dataset::new(bandit_spec());
        let mut rng = seeded(8);
        for i in 0..20 {
            let p = PolicyParams::random(&bandit_spec(), &mut rng);
            let a = i % 2;
            let r = if a == 0 { 1.0 + i as f64 * 0.1 } else { 0.5 };
            data.add(SampleRecord::new(p, r, pull(a, r)).unwrap()).unwrap();
        }
        for _ in 0..10 {
            let init = PolicyParams::random(&bandit_spec(), &mut rng);
            let out = optimize(&data, &init, &OptimizerConfig::default(), &mut rng).unwrap();
            assert!(data.evaluate_wis_value(&out).unwrap() >= data.evaluate_wis_value(&init).unwrap());
            out.validate().unwrap();
        }
    }

    #[test]
    fn learn_uses_exactly_the_trial_budget() {
        let mut env = Bandit::hidden_treasure();
        let out = learn(&mut env, &bandit_spec(), &LearnConfig::new(1, 0.5, 2)).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.dataset.len(), 1);
        let out = learn(&mut env, &bandit_spec(), &LearnConfig::new(25, 0.5, 2)).unwrap();
        assert_eq!(out.dataset.len(), 25);
    }

    #[test]
    fn reinforce_stands_still_without_reward() {
        let model = EnvModel {
            states: 1,
            observations: 1,
            actions: 2,
            horizon: 5,
            start: vec![1.0],
            transition: vec![1.0, 1.0],
            observation: vec![1.0],
            reward: vec![RewardEntry::Fixed(0.0); 2],
        };
        let mut env = make_tabular(model).unwrap();
        let mut cfg = LearnConfig::new(30, 1.0, 5);
        cfg.reinforce.step_size = 0.5;
        let out = reinforce(&mut env, &bandit_spec(), &cfg).unwrap();
        let first = &out.trace.entries[0].sampled;
        assert!(out.trace.entries.iter().all(|e| &e.best == first));
        assert!(out.dataset.len() <= 1);
    }

    #[test]
    fn config_validation() {
        assert!(LearnConfig::new(0, 0.5, 0).validate().is_err());
        assert!(LearnConfig::new(5, 1.5, 0).validate().is_err());
        let mut c = LearnConfig::new(5, 0.5, 0);
        c.reinforce.decay = Some(0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let mut env = Bandit::hidden_failure();
        let out = learn(&mut env, &bandit_spec(), &LearnConfig::new(4, 0.5, 9)).unwrap();
        let mut buf = Vec::new();
        out.trace.write_csv(&mut buf, env.model().as_ref()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "iteration,exploited,return,proxy_value,exact_value");
        assert_eq!(lines.len(), 5);
    }
}
