//! Environment interaction: observations, actions, trajectories and the
//! concrete environments.

mod bandit;
mod load_unload;
mod model;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;

pub use bandit::{make_bandit, Bandit};
pub use load_unload::{make_load_unload, LoadUnload, LEFT, RIGHT};
pub use model::{exact_value, make_tabular, EnvModel, RewardEntry, RewardOutcome, TabularEnv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Observation(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action(pub usize);

/// Memory state a controller acted under and the one it chose for the next step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryUpdate {
    pub current: usize,
    pub next: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    /// Present iff the acting policy is a finite-state controller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<MemoryUpdate>,
}

/// Sufficient statistics of a history for likelihood computations.
///
/// `action[m][o][a]` counts how often action `a` followed observation `o`
/// under memory `m`; `memory[m][o][m']` counts memory transitions. Reactive
/// histories use a single memory state and carry no memory annotations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub observations: usize,
    pub actions: usize,
    pub memory_states: usize,
    pub annotated: bool,
    pub action: Vec<u32>,
    pub memory: Vec<u32>,
}

impl Counts {
    pub fn new(observations: usize, actions: usize, memory_states: usize, annotated: bool) -> Self {
        Counts {
            observations,
            actions,
            memory_states,
            annotated,
            action: vec![0; memory_states * observations * actions],
            memory: vec![0; memory_states * observations * memory_states],
        }
    }

    pub fn action_count(&self, m: usize, o: usize, a: usize) -> u32 {
        self.action[(m * self.observations + o) * self.actions + a]
    }

    pub fn memory_count(&self, m: usize, o: usize, next: usize) -> u32 {
        self.memory[(m * self.observations + o) * self.memory_states + next]
    }

    /// Number of steps summarized.
    pub fn len(&self) -> usize {
        self.action.iter().map(|&n| n as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn record(&mut self, step: &Step) -> Result<()> {
        let o = step.obs.0;
        let a = step.action.0;
        if o >= self.observations || a >= self.actions {
            return Err(Error::contract(format!(
                "step (obs {o}, action {a}) outside {}x{} spaces",
                self.observations, self.actions
            )));
        }
        let m = match (step.memory, self.annotated) {
            (Some(mu), true) => {
                if mu.current >= self.memory_states || mu.next >= self.memory_states {
                    return Err(Error::contract(format!(
                        "memory transition {}->{} outside {} states",
                        mu.current, mu.next, self.memory_states
                    )));
                }
                self.memory[(mu.current * self.observations + o) * self.memory_states + mu.next] += 1;
                mu.current
            }
            (None, false) => 0,
            (Some(_), false) => {
                return Err(Error::contract("memory annotation on an unannotated history"))
            }
            (None, true) => return Err(Error::contract("step lacks a memory annotation")),
        };
        self.action[(m * self.observations + o) * self.actions + a] += 1;
        Ok(())
    }
}

/// One trial: the ordered steps plus their cached counts.
///
/// Archives may drop the step list and keep only the counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    steps: Vec<Step>,
    counts: Counts,
}

impl History {
    /// An empty history; `memory_states > 0` marks a controller history.
    pub fn new(observations: usize, actions: usize, memory_states: Option<usize>) -> Self {
        let counts = match memory_states {
            Some(m) => Counts::new(observations, actions, m, true),
            None => Counts::new(observations, actions, 1, false),
        };
        History { steps: Vec::new(), counts }
    }

    pub fn from_steps(
        observations: usize,
        actions: usize,
        memory_states: Option<usize>,
        steps: impl IntoIterator<Item = Step>,
    ) -> Result<Self> {
        let mut h = History::new(observations, actions, memory_states);
        for s in steps {
            h.push(s)?;
        }
        Ok(h)
    }

    /// A history known only through its counts.
    pub fn from_counts(counts: Counts) -> Self {
        History { steps: Vec::new(), counts }
    }

    pub fn push(&mut self, step: Step) -> Result<()> {
        self.counts.record(&step)?;
        self.steps.push(step);
        Ok(())
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn counts(&self) -> &Counts {
        &self.counts
    }

    pub fn has_steps(&self) -> bool {
        self.steps.len() == self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops the step list, keeping the sufficient statistics.
    pub fn strip_steps(&mut self) {
        self.steps = Vec::new();
    }

    /// Recomputes the counts from the steps and compares with the cache.
    pub fn counts_consistent(&self) -> bool {
        let c = &self.counts;
        let mut fresh = Counts::new(c.observations, c.actions, c.memory_states, c.annotated);
        self.steps.iter().all(|s| fresh.record(s).is_ok()) && fresh == self.counts
    }
}

/// Outcome of executing one action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub observation: Observation,
    /// The trial ended before the horizon.
    pub done: bool,
}

/// A single-trial state machine.
pub trait Environment: Send {
    fn name(&self) -> &str;
    fn num_observations(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Starts a new trial and returns the first observation.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation;
    fn step(&mut self, action: Action, rng: &mut dyn RngCore) -> Transition;
    /// Tabular description of the dynamics, when one exists.
    fn model(&self) -> Option<EnvModel> {
        None
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn num_observations(&self) -> usize {
        (**self).num_observations()
    }
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation {
        (**self).reset(rng)
    }
    fn step(&mut self, action: Action, rng: &mut dyn RngCore) -> Transition {
        (**self).step(action, rng)
    }
    fn model(&self) -> Option<EnvModel> {
        (**self).model()
    }
}

/// Undiscounted sum of rewards, the default return.
pub fn sum_of_rewards(steps: &[Step]) -> f64 {
    steps.iter().map(|s| s.reward).sum()
}

/// Runs one full trial of `policy` and returns `(return, history)`.
pub fn sample<E: Environment + ?Sized>(
    env: &mut E,
    policy: &PolicyParams,
    rng: &mut dyn RngCore,
) -> Result<(f64, History)> {
    sample_with(env, policy, rng, sum_of_rewards)
}

/// [`sample`] with a custom return aggregator.
pub fn sample_with<E: Environment + ?Sized>(
    env: &mut E,
    policy: &PolicyParams,
    rng: &mut dyn RngCore,
    aggregate: impl Fn(&[Step]) -> f64,
) -> Result<(f64, History)> {
    let spec = policy.spec();
    if spec.observations != env.num_observations() || spec.actions != env.num_actions() {
        return Err(Error::config(format!(
            "policy spaces {}x{} do not match environment '{}' ({}x{})",
            spec.observations,
            spec.actions,
            env.name(),
            env.num_observations(),
            env.num_actions()
        )));
    }
    let controller = policy.is_controller();
    let mut history = History::new(
        spec.observations,
        spec.actions,
        controller.then_some(spec.memory_states),
    );
    let mut obs = env.reset(rng);
    let mut mem = 0;
    for _ in 0..env.horizon() {
        let (action, next_mem) = policy.act(obs, mem, rng);
        let tr = env.step(action, rng);
        history.push(Step {
            obs,
            action,
            reward: tr.reward,
            memory: controller.then_some(MemoryUpdate {
                current: mem,
                next: next_mem,
            }),
        })?;
        obs = tr.observation;
        mem = next_mem;
        if tr.done {
            break;
        }
    }
    let ret = aggregate(history.steps());
    Ok((ret, history))
}
