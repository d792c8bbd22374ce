//! Single-state bandits with discrete reward distributions per arm.

use rand::RngCore;

use super::model::{EnvModel, RewardEntry, RewardOutcome};
use super::{Action, Environment, Observation, Transition};
use crate::error::{Error, Result};
use crate::rng::sample_index;

/// A multi-armed bandit: one state, one observation, one pull per trial.
#[derive(Clone, Debug)]
pub struct Bandit {
    name: String,
    arms: Vec<Vec<RewardOutcome>>,
}

/// Builds a bandit from per-arm outcome lists.
pub fn make_bandit(arms: Vec<Vec<RewardOutcome>>) -> Result<Bandit> {
    if arms.is_empty() {
        return Err(Error::config("a bandit needs at least one arm"));
    }
    for (i, arm) in arms.iter().enumerate() {
        RewardEntry::Outcomes(arm.clone())
            .validate()
            .map_err(|e| Error::config(format!("arm {i}: {e}")))?;
    }
    Ok(Bandit {
        name: "bandit".to_string(),
        arms,
    })
}

fn outcomes(pairs: &[(f64, f64)]) -> Vec<RewardOutcome> {
    pairs
        .iter()
        .map(|&(value, prob)| RewardOutcome { value, prob })
        .collect()
}

impl Bandit {
    /// "Hidden treasure": arm 0 pays -10 w.p. 0.99 and +1090 w.p. 0.01, arm 1 pays 0.
    pub fn hidden_treasure() -> Self {
        let mut b = make_bandit(vec![outcomes(&[(-10.0, 0.99), (1090.0, 0.01)]), outcomes(&[(0.0, 1.0)])])
            .expect("preset is normalized");
        b.name = "bandit-ht".to_string();
        b
    }

    /// "Hidden failure": arm 0 pays 1, arm 1 pays 10 w.p. 0.99 and -990 w.p. 0.01.
    pub fn hidden_failure() -> Self {
        let mut b = make_bandit(vec![outcomes(&[(1.0, 1.0)]), outcomes(&[(10.0, 0.99), (-990.0, 0.01)])])
            .expect("preset is normalized");
        b.name = "bandit-hf".to_string();
        b
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn arms(&self) -> &[Vec<RewardOutcome>] {
        &self.arms
    }

    pub fn arm_mean(&self, arm: usize) -> f64 {
        self.arms[arm].iter().map(|o| o.value * o.prob).sum()
    }

    /// Smallest and largest payoff of any arm.
    pub fn reward_range(&self) -> (f64, f64) {
        let values = self.arms.iter().flatten().map(|o| o.value);
        values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }
}

impl Environment for Bandit {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_observations(&self) -> usize {
        1
    }

    fn num_actions(&self) -> usize {
        self.arms.len()
    }

    fn horizon(&self) -> usize {
        1
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Observation {
        Observation(0)
    }

    fn step(&mut self, action: Action, rng: &mut dyn RngCore) -> Transition {
        let arm = &self.arms[action.0];
        let probs: Vec<f64> = arm.iter().map(|o| o.prob).collect();
        Transition {
            reward: arm[sample_index(&probs, rng)].value,
            observation: Observation(0),
            done: true,
        }
    }

    fn model(&self) -> Option<EnvModel> {
        let k = self.arms.len();
        Some(EnvModel {
            states: 1,
            observations: 1,
            actions: k,
            horizon: 1,
            start: vec![1.0],
            transition: vec![1.0; k],
            observation: vec![1.0],
            reward: self.arms.iter().cloned().map(RewardEntry::Outcomes).collect(),
        })
    }
}
