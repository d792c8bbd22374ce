//! The load-unload cart.
//!
//! A cart moves along `n` positions. It observes its position but not whether
//! it carries a load. Entering the leftmost position loads it; arriving at the
//! rightmost position while loaded unloads it and pays 1. Moves into a wall
//! leave the position unchanged. Trials start at the leftmost position,
//! loaded.
//!
//! With 5 positions and 100 steps the best controller collects its first
//! reward at step 4 and one more every 8 steps, 13 in total.

use rand::RngCore;

use super::model::{EnvModel, RewardEntry};
use super::{Action, Environment, Observation, Transition};
use crate::error::{Error, Result};
use crate::policy::{PolicyBounds, PolicyClassSpec, PolicyParams};

pub const LEFT: Action = Action(0);
pub const RIGHT: Action = Action(1);

#[derive(Clone, Debug)]
pub struct LoadUnload {
    positions: usize,
    horizon: usize,
    position: usize,
    loaded: bool,
}

pub fn make_load_unload(n_positions: usize, horizon: usize) -> Result<LoadUnload> {
    if n_positions < 2 {
        return Err(Error::config("load-unload needs at least 2 positions"));
    }
    if horizon < 1 {
        return Err(Error::config("load-unload horizon must be at least 1"));
    }
    Ok(LoadUnload {
        positions: n_positions,
        horizon,
        position: 0,
        loaded: true,
    })
}

impl LoadUnload {
    pub fn positions(&self) -> usize {
        self.positions
    }

    /// `(position, loaded, reward)` after taking `action`.
    fn advance(&self, position: usize, loaded: bool, action: Action) -> (usize, bool, f64) {
        let last = self.positions - 1;
        let next = if action == LEFT {
            position.saturating_sub(1)
        } else {
            (position + 1).min(last)
        };
        if next == 0 {
            (next, true, 0.0)
        } else if next == last && next != position && loaded {
            (next, false, 1.0)
        } else {
            (next, loaded, 0.0)
        }
    }

    fn state_index(position: usize, loaded: bool) -> usize {
        2 * position + usize::from(loaded)
    }

    /// Reactive class over this environment's spaces.
    pub fn reactive_spec(&self, bounds: PolicyBounds) -> Result<PolicyClassSpec> {
        PolicyClassSpec::reactive(self.positions, 2, bounds)
    }

    pub fn controller_spec(&self, memory_states: usize, bounds: PolicyBounds) -> Result<PolicyClassSpec> {
        PolicyClassSpec::controller(self.positions, 2, memory_states, bounds)
    }

    /// The deterministic one-bit controller: memory 0 heads right, memory 1
    /// heads left; the ends flip the bit.
    pub fn optimal_controller(&self) -> PolicyParams {
        let spec = self
            .controller_spec(2, PolicyBounds::unbounded())
            .expect("two memory states are valid");
        let last = self.positions - 1;
        let mut params = Vec::with_capacity(spec.num_params());
        for m in 0..2 {
            for o in 0..self.positions {
                let right = o == 0 || (o != last && m == 0);
                params.extend(if right { [0.0, 1.0] } else { [1.0, 0.0] });
            }
        }
        for m in 0..2 {
            for o in 0..self.positions {
                let next = if o == 0 {
                    0
                } else if o == last {
                    1
                } else {
                    m
                };
                params.extend(if next == 0 { [1.0, 0.0] } else { [0.0, 1.0] });
            }
        }
        PolicyParams::new(spec, params).expect("deterministic rows are normalized")
    }

    /// Reactive policy that always moves right.
    pub fn always_right(&self) -> PolicyParams {
        let spec = self
            .reactive_spec(PolicyBounds::unbounded())
            .expect("valid reactive class");
        let params = (0..self.positions).flat_map(|_| [0.0, 1.0]).collect();
        PolicyParams::new(spec, params).expect("deterministic rows are normalized")
    }
}

impl Environment for LoadUnload {
    fn name(&self) -> &str {
        "load-unload"
    }

    fn num_observations(&self) -> usize {
        self.positions
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Observation {
        self.position = 0;
        self.loaded = true;
        Observation(0)
    }

    fn step(&mut self, action: Action, _rng: &mut dyn RngCore) -> Transition {
        let (position, loaded, reward) = self.advance(self.position, self.loaded, action);
        self.position = position;
        self.loaded = loaded;
        Transition {
            reward,
            observation: Observation(position),
            done: false,
        }
    }

    /// Hidden state `2·position + loaded`; observation is the position.
    fn model(&self) -> Option<EnvModel> {
        let n = self.positions;
        let states = 2 * n;
        let mut start = vec![0.0; states];
        start[Self::state_index(0, true)] = 1.0;
        let mut transition = vec![0.0; states * 2 * states];
        let mut reward = Vec::with_capacity(states * 2);
        let mut observation = vec![0.0; states * n];
        for s in 0..states {
            let (position, loaded) = (s / 2, s % 2 == 1);
            observation[s * n + position] = 1.0;
            for a in 0..2 {
                let (p2, l2, r) = self.advance(position, loaded, Action(a));
                transition[(s * 2 + a) * states + Self::state_index(p2, l2)] = 1.0;
                reward.push(RewardEntry::Fixed(r));
            }
        }
        Some(EnvModel {
            states,
            observations: n,
            actions: 2,
            horizon: self.horizon,
            start,
            transition,
            observation,
            reward,
        })
    }
}
