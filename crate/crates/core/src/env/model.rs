//! Tabular POMDP descriptions.
//!
//! The JSON config schema mirrors [`EnvModel`]'s fields:
//!
//! ```json
//! {
//!   "states": 2, "observations": 1, "actions": 2, "horizon": 3,
//!   "start": [1.0, 0.0],
//!   "transition": [/* states*actions rows of length states, row-major (s, a, s') */],
//!   "observation": [/* states rows of length observations, (s, o) */],
//!   "reward": [/* states*actions entries (s, a): a number, or a list of
//!                 {"value": v, "prob": p} outcomes */]
//! }
//! ```
//!
//! Within a step the environment is in state `s`, emits `o ~ O(·|s)`, receives
//! `a`, pays `r ~ R(·|s,a)` and moves to `s' ~ P(·|s,a)`.

use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{Action, Environment, History, Observation, Transition};
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rng::sample_index;

const ROW_SUM_TOL: f64 = 1e-12;

/// Largest joint (state, memory) space [`exact_value`] will enumerate.
pub const MAX_JOINT_STATES: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub value: f64,
    pub prob: f64,
}

/// Reward of one (state, action) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RewardEntry {
    Fixed(f64),
    Outcomes(Vec<RewardOutcome>),
}

impl RewardEntry {
    pub fn mean(&self) -> f64 {
        match self {
            RewardEntry::Fixed(v) => *v,
            RewardEntry::Outcomes(os) => os.iter().map(|o| o.value * o.prob).sum(),
        }
    }

    pub fn prob_of(&self, value: f64) -> f64 {
        match self {
            RewardEntry::Fixed(v) => {
                if *v == value {
                    1.0
                } else {
                    0.0
                }
            }
            RewardEntry::Outcomes(os) => os.iter().filter(|o| o.value == value).map(|o| o.prob).sum(),
        }
    }

    fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        match self {
            RewardEntry::Fixed(v) => *v,
            RewardEntry::Outcomes(os) => {
                let probs: Vec<f64> = os.iter().map(|o| o.prob).collect();
                os[sample_index(&probs, rng)].value
            }
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            RewardEntry::Fixed(v) if v.is_finite() => Ok(()),
            RewardEntry::Fixed(v) => Err(Error::config(format!("non-finite reward {v}"))),
            RewardEntry::Outcomes(os) => {
                if os.iter().any(|o| !o.value.is_finite()) {
                    return Err(Error::config("non-finite reward outcome"));
                }
                check_row(&os.iter().map(|o| o.prob).collect::<Vec<_>>(), "reward outcomes")
            }
        }
    }
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::config(format!("{what}: negative or non-finite probability in {row:?}")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::config(format!("{what}: probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// Complete tabular description of a POMDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvModel {
    pub states: usize,
    pub observations: usize,
    pub actions: usize,
    pub horizon: usize,
    pub start: Vec<f64>,
    /// Row-major `(s, a, s')`.
    pub transition: Vec<f64>,
    /// Row-major `(s, o)`.
    pub observation: Vec<f64>,
    /// Row-major `(s, a)`.
    pub reward: Vec<RewardEntry>,
}

impl EnvModel {
    pub fn validate(&self) -> Result<()> {
        let (s, o, a) = (self.states, self.observations, self.actions);
        if s == 0 || o == 0 || a == 0 {
            return Err(Error::config("model spaces must be non-empty"));
        }
        let sizes = [
            ("start", self.start.len(), s),
            ("transition", self.transition.len(), s * a * s),
            ("observation", self.observation.len(), s * o),
            ("reward", self.reward.len(), s * a),
        ];
        for (name, got, want) in sizes {
            if got != want {
                return Err(Error::config(format!("{name} table has {got} entries, expected {want}")));
            }
        }
        check_row(&self.start, "start")?;
        for (i, row) in self.transition.chunks(s).enumerate() {
            check_row(row, &format!("transition row (s={}, a={})", i / a, i % a))?;
        }
        for (i, row) in self.observation.chunks(o).enumerate() {
            check_row(row, &format!("observation row s={i}"))?;
        }
        for r in &self.reward {
            r.validate()?;
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let m: EnvModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.actions + a) * self.states;
        &self.transition[start..start + self.states]
    }

    pub fn observation_row(&self, s: usize) -> &[f64] {
        &self.observation[s * self.observations..(s + 1) * self.observations]
    }

    pub fn reward_entry(&self, s: usize, a: usize) -> &RewardEntry {
        &self.reward[s * self.actions + a]
    }

    /// `ln Pr(h | θ)` including the environment's factor, by a scaled
    /// forward pass over hidden states. Requires the history's steps.
    ///
    /// This is the full-model likelihood an agent cannot compute; tests use
    /// it to confirm that likelihood ratios reduce to policy-only ratios.
    pub fn history_log_likelihood(&self, policy: &PolicyParams, history: &History) -> Result<f64> {
        if !history.has_steps() {
            return Err(Error::contract("full likelihood needs the step list"));
        }
        let mut alpha = self.start.clone();
        let mut log_scale = 0.0;
        for step in history.steps() {
            let (o, a) = (step.obs.0, step.action.0);
            let (m, m_next) = match step.memory {
                Some(mu) => (mu.current, mu.next),
                None => (0, 0),
            };
            let agent = policy.action_prob(m, o, a) * policy.memory_prob(m, o, m_next);
            let mut next = vec![0.0; self.states];
            for (s, &p) in alpha.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let w = p
                    * self.observation_row(s)[o]
                    * agent
                    * self.reward_entry(s, a).prob_of(step.reward);
                if w == 0.0 {
                    continue;
                }
                for (s2, &pt) in self.transition_row(s, a).iter().enumerate() {
                    next[s2] += w * pt;
                }
            }
            let z: f64 = next.iter().sum();
            if z == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            log_scale += z.ln();
            alpha = next.into_iter().map(|x| x / z).collect();
        }
        Ok(log_scale)
    }
}

/// Expected return of `policy` under `model`, by forward recursion over the
/// joint (state, memory) distribution. Exact; no sampling.
pub fn exact_value(model: &EnvModel, policy: &PolicyParams) -> Result<f64> {
    let spec = policy.spec();
    if spec.observations != model.observations || spec.actions != model.actions {
        return Err(Error::config(format!(
            "policy spaces {}x{} do not match model {}x{}",
            spec.observations, spec.actions, model.observations, model.actions
        )));
    }
    let mems = spec.memory_states;
    let joint = model.states.saturating_mul(mems);
    if joint > MAX_JOINT_STATES {
        return Err(Error::Capacity(format!(
            "{} states x {mems} memory states exceeds {MAX_JOINT_STATES}",
            model.states
        )));
    }
    let mean_reward: Vec<f64> = model.reward.iter().map(RewardEntry::mean).collect();
    let mut dist = vec![0.0; joint];
    for (s, &p) in model.start.iter().enumerate() {
        dist[s * mems] = p;
    }
    let mut value = 0.0;
    for _ in 0..model.horizon {
        let mut next = vec![0.0; joint];
        for s in 0..model.states {
            for m in 0..mems {
                let p = dist[s * mems + m];
                if p == 0.0 {
                    continue;
                }
                for (o, &po) in model.observation_row(s).iter().enumerate() {
                    if po == 0.0 {
                        continue;
                    }
                    let mem_row = policy.memory_row(m, o);
                    for (a, &pa) in policy.action_row(m, o).iter().enumerate() {
                        let w = p * po * pa;
                        if w == 0.0 {
                            continue;
                        }
                        value += w * mean_reward[s * model.actions + a];
                        for (s2, &pt) in model.transition_row(s, a).iter().enumerate() {
                            if pt == 0.0 {
                                continue;
                            }
                            for (m2, &pm) in mem_row.iter().enumerate() {
                                next[s2 * mems + m2] += w * pt * pm;
                            }
                        }
                    }
                }
            }
        }
        dist = next;
    }
    Ok(value)
}

/// An environment that samples directly from an [`EnvModel`].
#[derive(Clone, Debug)]
pub struct TabularEnv {
    model: EnvModel,
    name: String,
    state: usize,
}

pub fn make_tabular(model: EnvModel) -> Result<TabularEnv> {
    model.validate()?;
    Ok(TabularEnv {
        model,
        name: "tabular".to_string(),
        state: 0,
    })
}

impl TabularEnv {
    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn env_model(&self) -> &EnvModel {
        &self.model
    }
}

impl Environment for TabularEnv {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_observations(&self) -> usize {
        self.model.observations
    }

    fn num_actions(&self) -> usize {
        self.model.actions
    }

    fn horizon(&self) -> usize {
        self.model.horizon
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation {
        self.state = sample_index(&self.model.start, rng);
        Observation(sample_index(self.model.observation_row(self.state), rng))
    }

    fn step(&mut self, action: Action, rng: &mut dyn RngCore) -> Transition {
        let reward = self.model.reward_entry(self.state, action.0).draw(rng);
        self.state = sample_index(self.model.transition_row(self.state, action.0), rng);
        let observation = Observation(sample_index(self.model.observation_row(self.state), rng));
        Transition {
            reward,
            observation,
            done: false,
        }
    }

    fn model(&self) -> Option<EnvModel> {
        Some(self.model.clone())
    }
}
