//! Likelihood-ratio policy search.
//!
//! Experience gathered under any mix of policies is archived in a [`Dataset`]
//! and reused to estimate the value (and gradient) of arbitrary other policies
//! through importance sampling. Because the environment's contribution to a
//! history's likelihood does not depend on the policy, only the agent's own
//! action and memory probabilities enter the ratio, so no model of the
//! environment is needed.
//!
//! Modules:
//! - [`env`]: the POMDP interaction contract, trajectory recording, and the
//!   bandit, load-unload and generic tabular environments.
//! - [`policy`]: reactive policies and finite-state controllers with
//!   probability tables bounded away from zero.
//! - [`estimator`]: the proxy environment (IS and WIS over a mixture of
//!   sampling policies).
//! - [`learner`]: the sample / archive / optimize loop and REINFORCE.
//! - [`bounds`]: sample-complexity formulas for the WIS estimator.
//! - [`harness`]: experiment grids, archives and the command line.

pub mod bounds;
pub mod env;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod learner;
pub mod math;
pub mod policy;
pub mod rng;

pub use env::{
    exact_value, sample, Action, Environment, EnvModel, History, Observation, Step, Transition,
};
pub use error::{Error, Result};
pub use estimator::{Dataset, Estimate, SampleRecord};
pub use learner::{learn, reinforce, LearnConfig, LearnOutcome, LearnTrace};
pub use policy::{PolicyBounds, PolicyClassSpec, PolicyKind, PolicyParams};
