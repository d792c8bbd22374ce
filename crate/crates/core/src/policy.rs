//! Stochastic policy classes with bounded probability tables.
//!
//! Two classes are supported: reactive policies, a table `θ[o][a]`, and
//! finite-state controllers with an action table `θ[m][o][a]` and an
//! independent memory table `θ[m][o][m']`. A controller starts in memory
//! state 0 and, at each step, draws the action and the next memory state
//! independently given the current observation and memory.
//!
//! Parameters are laid out flat: the action table row-major by `(m, o, a)`
//! (by `(o, a)` for reactive policies), followed by the memory table
//! row-major by `(m, o, m')`. Gradients use the same layout.

use rand::{Rng, RngCore};
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Counts, History, Observation};
use crate::error::{Error, Result};
use crate::rng::sample_index;

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Reactive,
    Controller,
}

/// Probability bounds `lo <= θ <= hi` for every table entry.
///
/// Only `lo` is enforced on rows; for a row of length `k` the simplex caps
/// entries at `1 - (k-1)·lo` anyway. `hi` feeds the sample-complexity formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for PolicyBounds {
    fn default() -> Self {
        PolicyBounds { lo: 0.1, hi: 0.9 }
    }
}

impl PolicyBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::config(format!("invalid probability bounds [{lo}, {hi}]")));
        }
        Ok(PolicyBounds { lo, hi })
    }

    /// No bounds at all; admits deterministic, hand-specified policies.
    pub fn unbounded() -> Self {
        PolicyBounds { lo: 0.0, hi: 1.0 }
    }
}

/// Dimensions and bounds of a policy class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyClassSpec {
    pub kind: PolicyKind,
    pub observations: usize,
    pub actions: usize,
    /// 1 for reactive policies.
    pub memory_states: usize,
    pub bounds: PolicyBounds,
}

impl PolicyClassSpec {
    pub fn reactive(observations: usize, actions: usize, bounds: PolicyBounds) -> Result<Self> {
        let spec = PolicyClassSpec {
            kind: PolicyKind::Reactive,
            observations,
            actions,
            memory_states: 1,
            bounds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn controller(
        observations: usize,
        actions: usize,
        memory_states: usize,
        bounds: PolicyBounds,
    ) -> Result<Self> {
        let spec = PolicyClassSpec {
            kind: PolicyKind::Controller,
            observations,
            actions,
            memory_states,
            bounds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        PolicyBounds::new(self.bounds.lo, self.bounds.hi)?;
        if self.observations == 0 || self.actions == 0 || self.memory_states == 0 {
            return Err(Error::config("policy class dimensions must be positive"));
        }
        if self.kind == PolicyKind::Reactive && self.memory_states != 1 {
            return Err(Error::config("reactive policies have exactly one memory state"));
        }
        let widest = match self.kind {
            PolicyKind::Reactive => self.actions,
            PolicyKind::Controller => self.actions.max(self.memory_states),
        };
        if self.bounds.lo * widest as f64 > 1.0 + ROW_SUM_TOL {
            return Err(Error::config(format!(
                "lower bound {} infeasible for rows of length {widest}",
                self.bounds.lo
            )));
        }
        Ok(())
    }

    pub fn is_controller(&self) -> bool {
        self.kind == PolicyKind::Controller
    }

    /// Number of rows in the action table.
    pub fn action_rows(&self) -> usize {
        self.memory_states * self.observations
    }

    pub fn action_len(&self) -> usize {
        self.action_rows() * self.actions
    }

    pub fn memory_len(&self) -> usize {
        if self.is_controller() {
            self.action_rows() * self.memory_states
        } else {
            0
        }
    }

    /// Length of the flat parameter vector.
    pub fn num_params(&self) -> usize {
        self.action_len() + self.memory_len()
    }

    /// Table factors per step in a history likelihood (1 reactive, 2 controller).
    pub fn factors_per_step(&self) -> usize {
        if self.is_controller() {
            2
        } else {
            1
        }
    }

    pub fn action_index(&self, m: usize, o: usize, a: usize) -> usize {
        (m * self.observations + o) * self.actions + a
    }

    pub fn memory_index(&self, m: usize, o: usize, next: usize) -> usize {
        self.action_len() + (m * self.observations + o) * self.memory_states + next
    }

    /// Checks that `counts` were recorded in this class's spaces.
    pub fn check_counts(&self, counts: &Counts) -> Result<()> {
        if counts.observations != self.observations || counts.actions != self.actions {
            return Err(Error::contract(format!(
                "history spaces {}x{} do not match policy class {}x{}",
                counts.observations, counts.actions, self.observations, self.actions
            )));
        }
        match self.kind {
            PolicyKind::Reactive if counts.memory_states != 1 => Err(Error::contract(
                "reactive policy cannot score a multi-memory history",
            )),
            PolicyKind::Controller if self.memory_states > 1 && !counts.annotated => {
                Err(Error::contract("controller policy needs memory-annotated histories"))
            }
            PolicyKind::Controller if counts.memory_states != self.memory_states => {
                Err(Error::contract(format!(
                    "history has {} memory states, policy has {}",
                    counts.memory_states, self.memory_states
                )))
            }
            _ => Ok(()),
        }
    }

    /// Sparse `(flat parameter index, count)` pairs of a history's counts.
    ///
    /// `log Φ = Σ count · ln θ[index]` over these pairs.
    pub fn features(&self, counts: &Counts) -> Result<Vec<(usize, u32)>> {
        self.check_counts(counts)?;
        let mut out: Vec<(usize, u32)> = counts
            .action
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(i, &n)| (i, n))
            .collect();
        if self.is_controller() && counts.annotated {
            let off = self.action_len();
            out.extend(
                counts
                    .memory
                    .iter()
                    .enumerate()
                    .filter(|(_, &n)| n > 0)
                    .map(|(i, &n)| (off + i, n)),
            );
        }
        Ok(out)
    }
}

/// A point in a policy class.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    spec: PolicyClassSpec,
    params: Vec<f64>,
}

impl PolicyParams {
    /// Builds and validates a policy from flat tables.
    pub fn new(spec: PolicyClassSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let p = Self::from_flat_unchecked(spec, params)?;
        p.validate()?;
        Ok(p)
    }

    /// Builds a policy without checking row sums or bounds.
    ///
    /// Likelihoods stay defined for any positive entries, which finite
    /// differences and unprojected gradient steps rely on.
    pub fn from_flat_unchecked(spec: PolicyClassSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.num_params() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                spec.num_params(),
                params.len()
            )));
        }
        Ok(PolicyParams { spec, params })
    }

    /// Uniform rows everywhere.
    pub fn uniform(spec: &PolicyClassSpec) -> Self {
        let mut params = vec![1.0 / spec.actions as f64; spec.action_len()];
        params.extend(std::iter::repeat_n(1.0 / spec.memory_states as f64, spec.memory_len()));
        PolicyParams { spec: *spec, params }
    }

    pub fn spec(&self) -> &PolicyClassSpec {
        &self.spec
    }

    pub fn kind(&self) -> PolicyKind {
        self.spec.kind
    }

    pub fn is_controller(&self) -> bool {
        self.spec.is_controller()
    }

    /// Flat parameter vector.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    pub fn action_prob(&self, m: usize, o: usize, a: usize) -> f64 {
        self.params[self.spec.action_index(m, o, a)]
    }

    /// Memory-transition probability; always 1 for reactive policies.
    pub fn memory_prob(&self, m: usize, o: usize, next: usize) -> f64 {
        if self.is_controller() {
            self.params[self.spec.memory_index(m, o, next)]
        } else {
            1.0
        }
    }

    pub fn action_row(&self, m: usize, o: usize) -> &[f64] {
        let start = self.spec.action_index(m, o, 0);
        &self.params[start..start + self.spec.actions]
    }

    pub fn memory_row(&self, m: usize, o: usize) -> &[f64] {
        if !self.is_controller() {
            return &[1.0];
        }
        let start = self.spec.memory_index(m, o, 0);
        &self.params[start..start + self.spec.memory_states]
    }

    fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let a = self.spec.actions;
        let m = self.spec.memory_states;
        let (act, mem) = self.params.split_at(self.spec.action_len());
        act.chunks(a).chain(mem.chunks(m.max(1)))
    }

    /// Checks row sums and the lower bound.
    pub fn validate(&self) -> Result<()> {
        let lo = self.spec.bounds.lo;
        for row in self.rows() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL * row.len() as f64 {
                return Err(Error::config(format!("row {row:?} sums to {sum}, not 1")));
            }
            if row.iter().any(|&p| !p.is_finite() || p < lo - ROW_SUM_TOL) {
                return Err(Error::config(format!("row {row:?} violates lower bound {lo}")));
            }
        }
        Ok(())
    }

    /// Draws an action and the next memory state.
    ///
    /// Reactive policies ignore `mem` and always return memory 0.
    pub fn act<R: RngCore + ?Sized>(&self, obs: Observation, mem: usize, rng: &mut R) -> (Action, usize) {
        let m = if self.is_controller() { mem } else { 0 };
        let action = Action(sample_index(self.action_row(m, obs.0), rng));
        let next = if self.is_controller() && self.spec.memory_states > 1 {
            sample_index(self.memory_row(m, obs.0), rng)
        } else {
            0
        };
        (action, next)
    }

    /// Natural log of every flat parameter.
    pub fn log_params(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.ln()).collect()
    }

    /// `ln Φ(h | θ)`, the log-probability of the agent's own choices in `h`.
    ///
    /// Computed from the history's counts: `Σ n[o][a] ln θ[o][a]`, plus the
    /// memory-transition terms for controllers.
    pub fn log_phi(&self, history: &History) -> Result<f64> {
        let counts = history.counts();
        self.spec.check_counts(counts)?;
        let mut total = 0.0;
        for (n, p) in counts.action.iter().zip(&self.params) {
            if *n > 0 {
                total += f64::from(*n) * p.ln();
            }
        }
        if self.is_controller() && counts.annotated {
            let mem = &self.params[self.spec.action_len()..];
            for (n, p) in counts.memory.iter().zip(mem) {
                if *n > 0 {
                    total += f64::from(*n) * p.ln();
                }
            }
        }
        Ok(total)
    }

    /// Gradient of [`log_phi`](Self::log_phi) over the flat parameters:
    /// `n / θ` per entry.
    pub fn grad_log_phi(&self, history: &History) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        for (i, n) in self.spec.features(history.counts())? {
            grad[i] = f64::from(n) / self.params[i];
        }
        Ok(grad)
    }

    /// Euclidean projection of every row onto `{p : Σp = 1, p >= lo}`.
    pub fn project(&self) -> Result<Self> {
        let lo = self.spec.bounds.lo;
        let mut out = Vec::with_capacity(self.params.len());
        for row in self.rows() {
            out.extend(project_row(row, lo)?);
        }
        Ok(PolicyParams {
            spec: self.spec,
            params: out,
        })
    }

    /// A policy drawn uniformly from the bounded class, row by row.
    pub fn random<R: RngCore + ?Sized>(spec: &PolicyClassSpec, rng: &mut R) -> Self {
        let lo = spec.bounds.lo;
        let mut params = Vec::with_capacity(spec.num_params());
        for _ in 0..spec.action_rows() {
            push_random_row(&mut params, spec.actions, lo, rng);
        }
        if spec.is_controller() {
            for _ in 0..spec.action_rows() {
                push_random_row(&mut params, spec.memory_states, lo, rng);
            }
        }
        PolicyParams { spec: *spec, params }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PolicyRecord::from(self)).expect("policy serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: PolicyRecord = serde_json::from_str(s)?;
        rec.try_into()
    }
}

/// Uniform draw from the shifted simplex `{p : Σp = 1, p >= lo}`.
fn push_random_row<R: RngCore + ?Sized>(out: &mut Vec<f64>, len: usize, lo: f64, rng: &mut R) {
    if len == 1 {
        out.push(1.0);
        return;
    }
    let mass = 1.0 - len as f64 * lo;
    let draws: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    out.extend(draws.iter().map(|e| lo + mass * e / total));
}

/// Projects `row` onto `{p : Σp = 1, p >= lo}` by shifting to the simplex
/// of mass `1 - k·lo` and applying the sort-based simplex projection.
pub fn project_row(row: &[f64], lo: f64) -> Result<Vec<f64>> {
    let k = row.len();
    let mass = 1.0 - k as f64 * lo;
    if mass < -ROW_SUM_TOL {
        return Err(Error::config(format!("lower bound {lo} infeasible for rows of length {k}")));
    }
    if row.iter().any(|x| !x.is_finite()) {
        return Err(Error::config(format!("non-finite entries in {row:?}")));
    }
    if mass <= 0.0 {
        return Ok(vec![lo; k]);
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() <= 1e-14 && row.iter().all(|&x| x >= lo) {
        return Ok(row.to_vec());
    }
    let shifted: Vec<f64> = row.iter().map(|x| x - lo).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - mass) / (j + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    Ok(shifted.iter().map(|q| lo + (q - tau).max(0.0)).collect())
}

/// Versioned on-disk form of a policy.
#[derive(Serialize, Deserialize)]
pub(crate) struct PolicyRecord {
    version: u32,
    kind: PolicyKind,
    observations: usize,
    actions: usize,
    memory_states: usize,
    bounds: PolicyBounds,
    action_table: Vec<f64>,
    #[serde(default)]
    memory_table: Vec<f64>,
}

pub const POLICY_FORMAT_VERSION: u32 = 1;

impl From<&PolicyParams> for PolicyRecord {
    fn from(p: &PolicyParams) -> Self {
        let (act, mem) = p.params.split_at(p.spec.action_len());
        PolicyRecord {
            version: POLICY_FORMAT_VERSION,
            kind: p.spec.kind,
            observations: p.spec.observations,
            actions: p.spec.actions,
            memory_states: p.spec.memory_states,
            bounds: p.spec.bounds,
            action_table: act.to_vec(),
            memory_table: mem.to_vec(),
        }
    }
}

impl TryFrom<PolicyRecord> for PolicyParams {
    type Error = Error;

    fn try_from(r: PolicyRecord) -> Result<Self> {
        if r.version != POLICY_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported policy format version {} (expected {POLICY_FORMAT_VERSION})",
                r.version
            )));
        }
        let spec = PolicyClassSpec {
            kind: r.kind,
            observations: r.observations,
            actions: r.actions,
            memory_states: r.memory_states,
            bounds: r.bounds,
        };
        let mut params = r.action_table;
        params.extend(r.memory_table);
        PolicyParams::new(spec, params)
    }
}
