//! Python bindings for the `lrsearch` core.
//!
//! Exposes environments, policy classes and policies, the experience
//! dataset with its estimators, the learning loops and the bound formulas.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lrsearch::bounds::{self, BoundInputs};
use lrsearch::env::{self as core_env, Bandit, EnvModel, Environment, History, LoadUnload, TabularEnv};
use lrsearch::harness::archive;
use lrsearch::learner::{self, LearnConfig};
use lrsearch::rng::seeded;
use lrsearch::{Dataset as CoreDataset, PolicyBounds, PolicyClassSpec, PolicyParams, SampleRecord};

fn to_py(e: lrsearch::Error) -> PyErr {
    if e.is_config() || matches!(e, lrsearch::Error::Contract(_)) {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Dimensions and probability bounds of a policy class.
#[pyclass(name = "PolicyClass", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPolicyClass {
    inner: PolicyClassSpec,
}

#[pymethods]
impl PyPolicyClass {
    #[staticmethod]
    #[pyo3(signature = (observations, actions, lo=0.1, hi=0.9))]
    fn reactive(observations: usize, actions: usize, lo: f64, hi: f64) -> PyResult<Self> {
        let b = PolicyBounds::new(lo, hi).map_err(to_py)?;
        let inner = PolicyClassSpec::reactive(observations, actions, b).map_err(to_py)?;
        Ok(PyPolicyClass { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (observations, actions, memory_states, lo=0.1, hi=0.9))]
    fn controller(observations: usize, actions: usize, memory_states: usize, lo: f64, hi: f64) -> PyResult<Self> {
        let b = PolicyBounds::new(lo, hi).map_err(to_py)?;
        let inner = PolicyClassSpec::controller(observations, actions, memory_states, b).map_err(to_py)?;
        Ok(PyPolicyClass { inner })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn memory_states(&self) -> usize {
        self.inner.memory_states
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// A point of a policy class: action table, then memory table, row-major.
#[pyclass(name = "Policy", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    inner: PolicyParams,
}

#[pymethods]
impl PyPolicy {
    #[new]
    fn new(class: &PyPolicyClass, params: Vec<f64>) -> PyResult<Self> {
        let inner = PolicyParams::new(class.inner, params).map_err(to_py)?;
        Ok(PyPolicy { inner })
    }

    #[staticmethod]
    fn uniform(class: &PyPolicyClass) -> Self {
        PyPolicy {
            inner: PolicyParams::uniform(&class.inner),
        }
    }

    #[staticmethod]
    fn random(class: &PyPolicyClass, seed: u64) -> Self {
        PyPolicy {
            inner: PolicyParams::random(&class.inner, &mut seeded(seed)),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyPolicy {
            inner: PolicyParams::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }

    #[getter]
    fn policy_class(&self) -> PyPolicyClass {
        PyPolicyClass {
            inner: *self.inner.spec(),
        }
    }

    fn log_phi(&self, history: &PyHistory) -> PyResult<f64> {
        self.inner.log_phi(&history.inner).map_err(to_py)
    }

    fn grad_log_phi(&self, history: &PyHistory) -> PyResult<Vec<f64>> {
        self.inner.grad_log_phi(&history.inner).map_err(to_py)
    }

    /// Euclidean projection of an arbitrary parameter vector onto the class.
    #[staticmethod]
    fn project(class: &PyPolicyClass, params: Vec<f64>) -> PyResult<Self> {
        let raw = PolicyParams::from_flat_unchecked(class.inner, params).map_err(to_py)?;
        Ok(PyPolicy {
            inner: raw.project().map_err(to_py)?,
        })
    }
}

/// One trial as returned by `Environment.sample`.
#[pyclass(name = "History", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHistory {
    inner: History,
}

#[pymethods]
impl PyHistory {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(observation, action, reward)` per step.
    fn steps(&self) -> Vec<(usize, usize, f64)> {
        self.inner
            .steps()
            .iter()
            .map(|s| (s.obs.0, s.action.0, s.reward))
            .collect()
    }
}

enum EnvKind {
    Bandit(Bandit),
    LoadUnload(LoadUnload),
    Tabular(TabularEnv),
}

impl EnvKind {
    fn env(&mut self) -> &mut dyn Environment {
        match self {
            EnvKind::Bandit(e) => e,
            EnvKind::LoadUnload(e) => e,
            EnvKind::Tabular(e) => e,
        }
    }

    fn env_ref(&self) -> &dyn Environment {
        match self {
            EnvKind::Bandit(e) => e,
            EnvKind::LoadUnload(e) => e,
            EnvKind::Tabular(e) => e,
        }
    }
}

#[pyclass(name = "Environment")]
struct PyEnvironment {
    inner: EnvKind,
}

#[pymethods]
impl PyEnvironment {
    #[staticmethod]
    fn hidden_treasure() -> Self {
        PyEnvironment {
            inner: EnvKind::Bandit(Bandit::hidden_treasure()),
        }
    }

    #[staticmethod]
    fn hidden_failure() -> Self {
        PyEnvironment {
            inner: EnvKind::Bandit(Bandit::hidden_failure()),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (positions=5, horizon=100))]
    fn load_unload(positions: usize, horizon: usize) -> PyResult<Self> {
        Ok(PyEnvironment {
            inner: EnvKind::LoadUnload(core_env::make_load_unload(positions, horizon).map_err(to_py)?),
        })
    }

    /// Tabular POMDP from its JSON description.
    #[staticmethod]
    fn tabular(model_json: &str) -> PyResult<Self> {
        let model = EnvModel::from_json_str(model_json).map_err(to_py)?;
        Ok(PyEnvironment {
            inner: EnvKind::Tabular(core_env::make_tabular(model).map_err(to_py)?),
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.env_ref().name().to_string()
    }

    #[getter]
    fn num_observations(&self) -> usize {
        self.inner.env_ref().num_observations()
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.env_ref().num_actions()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.env_ref().horizon()
    }

    #[pyo3(signature = (lo=0.1, hi=0.9))]
    fn reactive_class(&self, lo: f64, hi: f64) -> PyResult<PyPolicyClass> {
        let e = self.inner.env_ref();
        PyPolicyClass::reactive(e.num_observations(), e.num_actions(), lo, hi)
    }

    #[pyo3(signature = (memory_states, lo=0.1, hi=0.9))]
    fn controller_class(&self, memory_states: usize, lo: f64, hi: f64) -> PyResult<PyPolicyClass> {
        let e = self.inner.env_ref();
        PyPolicyClass::controller(e.num_observations(), e.num_actions(), memory_states, lo, hi)
    }

    /// The hand-built optimal controller (load-unload only).
    fn optimal_controller(&self) -> PyResult<PyPolicy> {
        match &self.inner {
            EnvKind::LoadUnload(e) => Ok(PyPolicy {
                inner: e.optimal_controller(),
            }),
            _ => Err(PyValueError::new_err("only load-unload has a built-in optimal controller")),
        }
    }

    /// Runs one trial; returns `(return, history)`.
    fn sample(&mut self, policy: &PyPolicy, seed: u64) -> PyResult<(f64, PyHistory)> {
        let (ret, h) = core_env::sample(self.inner.env(), &policy.inner, &mut seeded(seed)).map_err(to_py)?;
        Ok((ret, PyHistory { inner: h }))
    }

    /// Exact expected return from the environment model.
    fn exact_value(&self, policy: &PyPolicy) -> PyResult<f64> {
        let model = self
            .inner
            .env_ref()
            .model()
            .ok_or_else(|| PyValueError::new_err("environment has no model"))?;
        core_env::exact_value(&model, &policy.inner).map_err(to_py)
    }
}

/// Archived experience answering value and gradient queries.
#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: CoreDataset,
}

type EstimateTuple = (f64, Vec<f64>, f64);

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (class, verbose=false))]
    fn new(class: &PyPolicyClass, verbose: bool) -> Self {
        let inner = if verbose {
            CoreDataset::verbose(class.inner)
        } else {
            CoreDataset::new(class.inner)
        };
        PyDataset { inner }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn add(&mut self, policy: &PyPolicy, ret: f64, history: &PyHistory) -> PyResult<()> {
        let rec = SampleRecord::new(policy.inner.clone(), ret, history.inner.clone()).map_err(to_py)?;
        self.inner.add(rec).map_err(to_py)
    }

    /// `(value, gradient, effective_sample_size)` of the weighted estimator.
    fn evaluate_wis(&self, policy: &PyPolicy) -> PyResult<EstimateTuple> {
        let e = self.inner.evaluate_wis(&policy.inner).map_err(to_py)?;
        Ok((e.value, e.gradient, e.effective_sample_size))
    }

    /// `(value, gradient, effective_sample_size)` of the unweighted estimator.
    fn evaluate_is(&self, policy: &PyPolicy) -> PyResult<EstimateTuple> {
        let e = self.inner.evaluate_is(&policy.inner).map_err(to_py)?;
        Ok((e.value, e.gradient, e.effective_sample_size))
    }

    #[pyo3(signature = (path, environment="unknown", horizon=0, seed=0))]
    fn save(&self, path: PathBuf, environment: &str, horizon: usize, seed: u64) -> PyResult<()> {
        archive::save_dataset(&path, &self.inner, environment, horizon, seed).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: archive::load_experience(&path).map_err(to_py)?,
        })
    }
}

/// Trace rows `(iteration, exploited, return, proxy_value)`.
type TraceRows = Vec<(usize, bool, f64, f64)>;

#[allow(clippy::too_many_arguments)]
fn run_loop(
    env: &mut PyEnvironment,
    class: &PyPolicyClass,
    trials: usize,
    p_star: f64,
    seed: u64,
    restarts: usize,
    step_size: f64,
    reinforce: bool,
) -> PyResult<(PyPolicy, TraceRows, PyDataset)> {
    let mut cfg = LearnConfig::new(trials, p_star, seed);
    cfg.optimizer.restarts = restarts;
    cfg.reinforce.step_size = step_size;
    let out = if reinforce {
        learner::reinforce(env.inner.env(), &class.inner, &cfg)
    } else {
        learner::learn(env.inner.env(), &class.inner, &cfg)
    }
    .map_err(to_py)?;
    let trace = out
        .trace
        .entries
        .iter()
        .map(|e| (e.iteration, e.exploited, e.ret, e.proxy_value))
        .collect();
    Ok((PyPolicy { inner: out.policy }, trace, PyDataset { inner: out.dataset }))
}

/// Sample / archive / optimize loop; returns `(policy, trace, dataset)`.
#[pyfunction]
#[pyo3(signature = (env, policy_class, trials, p_star=0.5, seed=0, restarts=4))]
fn learn(
    env: &mut PyEnvironment,
    policy_class: &PyPolicyClass,
    trials: usize,
    p_star: f64,
    seed: u64,
    restarts: usize,
) -> PyResult<(PyPolicy, TraceRows, PyDataset)> {
    run_loop(env, policy_class, trials, p_star, seed, restarts, 1e-3, false)
}

/// REINFORCE baseline in the same loop; returns `(policy, trace, dataset)`.
#[pyfunction]
#[pyo3(signature = (env, policy_class, trials, seed=0, step_size=1e-3))]
fn reinforce(
    env: &mut PyEnvironment,
    policy_class: &PyPolicyClass,
    trials: usize,
    seed: u64,
    step_size: f64,
) -> PyResult<(PyPolicy, TraceRows, PyDataset)> {
    run_loop(env, policy_class, trials, 1.0, seed, 0, step_size, true)
}

#[pyfunction]
fn eta(c_lo: f64, c_hi: f64, horizon: u32) -> f64 {
    bounds::eta(c_lo, c_hi, horizon)
}

#[pyfunction]
fn wis_sup_deviation(v_max: f64, c_lo: f64, c_hi: f64, horizon: u32, n: u64) -> f64 {
    bounds::wis_sup_deviation(v_max, c_lo, c_hi, horizon, n)
}

#[pyfunction]
fn wis_variance_bound(v_max: f64, eta: f64, n: u64) -> f64 {
    bounds::wis_variance_bound(v_max, eta, n)
}

fn inputs(v_max: f64, eps: f64, delta: f64, horizon: u32, c_lo: f64, c_hi: f64, capacity: f64) -> BoundInputs {
    BoundInputs {
        v_max,
        eps,
        delta,
        horizon,
        c_lo,
        c_hi,
        capacity,
    }
}

#[allow(clippy::too_many_arguments)]
#[pyfunction]
fn pac_confidence(v_max: f64, eps: f64, delta: f64, horizon: u32, c_lo: f64, c_hi: f64, capacity: f64, n: u64) -> PyResult<f64> {
    bounds::pac_confidence(&inputs(v_max, eps, delta, horizon, c_lo, c_hi, capacity), n).map_err(to_py)
}

#[pyfunction]
fn invert_for_n(v_max: f64, eps: f64, delta: f64, horizon: u32, c_lo: f64, c_hi: f64, capacity: f64) -> PyResult<u64> {
    bounds::invert_for_n(&inputs(v_max, eps, delta, horizon, c_lo, c_hi, capacity)).map_err(to_py)
}

/// `(likelihood_ratio_row, reusable_trajectories_row, ratio)`.
#[allow(clippy::too_many_arguments)]
#[pyfunction]
fn compare_bounds(
    v_max: f64,
    eps: f64,
    delta: f64,
    horizon: u32,
    c_lo: f64,
    c_hi: f64,
    metric_entropy: f64,
    vc_dimension: f64,
) -> PyResult<(f64, f64, f64)> {
    let i = inputs(v_max, eps, delta, horizon, c_lo, c_hi, 1.0);
    let c = bounds::compare_bounds(&i, metric_entropy, vc_dimension).map_err(to_py)?;
    Ok((c.likelihood_ratio, c.reusable_trajectories, c.ratio))
}

#[pymodule]
fn pylrsearch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolicyClass>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyHistory>()?;
    m.add_class::<PyEnvironment>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(learn, m)?)?;
    m.add_function(wrap_pyfunction!(reinforce, m)?)?;
    m.add_function(wrap_pyfunction!(eta, m)?)?;
    m.add_function(wrap_pyfunction!(wis_sup_deviation, m)?)?;
    m.add_function(wrap_pyfunction!(wis_variance_bound, m)?)?;
    m.add_function(wrap_pyfunction!(pac_confidence, m)?)?;
    m.add_function(wrap_pyfunction!(invert_for_n, m)?)?;
    m.add_function(wrap_pyfunction!(compare_bounds, m)?)?;
    Ok(())
}
