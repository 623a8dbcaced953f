//! Python bindings: environment, estimators, policies and the experiment pipeline.

use std::path::PathBuf;

use blendsysid_core::blending;
use blendsysid_core::env::{self, EnvConfig, ImpairedArmEnv, ParamVector, Scenario};
use blendsysid_core::harness::pipeline::{self, Layout};
use blendsysid_core::harness::{selftest, EvalReport, ExperimentConfig, Method};
use blendsysid_core::nn::{Checkpoint, GaussianPolicy};
use blendsysid_core::rng;
use blendsysid_core::sysid::{measure_params, Estimator, EstimatorKind, SysidConfig};
use blendsysid_core::Error;
use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::MissingCheckpoint(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn params_from(v: Option<Vec<f64>>) -> PyResult<ParamVector> {
    match v {
        None => Ok(ParamVector::neutral()),
        Some(v) => ParamVector::from_slice(&v).map_err(to_py),
    }
}

fn env_config(json: Option<&str>) -> PyResult<EnvConfig> {
    let cfg: EnvConfig = match json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => EnvConfig::default(),
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

fn experiment_config(path: Option<PathBuf>) -> PyResult<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(&p).map_err(to_py),
        None => Ok(ExperimentConfig::default()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Planar human and assisting robot arms under one impairment vector.
#[pyclass(name = "ArmEnv")]
struct PyArmEnv {
    inner: ImpairedArmEnv,
}

#[pymethods]
impl PyArmEnv {
    /// `params` is `[noise_std0, noise_std1, weakness, range_limit]`; `config` is JSON overrides.
    #[new]
    #[pyo3(signature = (params=None, seed=0, config=None))]
    fn new(params: Option<Vec<f64>>, seed: u64, config: Option<&str>) -> PyResult<Self> {
        Ok(Self {
            inner: ImpairedArmEnv::new(env_config(config)?, params_from(params)?, rng::stream(seed, 1)),
        })
    }

    #[pyo3(signature = (params=None))]
    fn reset(&mut self, params: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        let p = match params {
            Some(_) => params_from(params)?,
            None => *self.inner.params(),
        };
        Ok(self.inner.reset(p).to_vec())
    }

    /// Returns `(observation, reward, force, done)`.
    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, f64, bool)> {
        let r = self.inner.step(&action).map_err(to_py)?;
        Ok((r.observation.to_vec(), r.reward, r.force, r.done))
    }

    fn observation(&self) -> Vec<f64> {
        self.inner.observation().to_vec()
    }

    #[getter]
    fn accumulated_force(&self) -> f64 {
        self.inner.state().accumulated_force
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.state().step
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.config().horizon
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_array().to_vec()
    }
}

/// Impairment estimator: `"ukf"`, `"spm"` or `"perfect"`.
#[pyclass(name = "Estimator")]
struct PyEstimator {
    inner: Estimator,
    env: EnvConfig,
    sysid: SysidConfig,
}

#[pymethods]
impl PyEstimator {
    #[new]
    #[pyo3(signature = (kind, seed=0))]
    fn new(kind: &str, seed: u64) -> PyResult<Self> {
        let env = EnvConfig::default();
        let sysid = SysidConfig::default();
        Ok(Self {
            inner: Estimator::new(parse(kind)?, env.bounds, &sysid, seed),
            env,
            sysid,
        })
    }

    /// Identifies a new system with parameters `truth`; returns the estimate.
    #[pyo3(signature = (truth, learn=false, seed=0))]
    fn identify(&mut self, truth: Vec<f64>, learn: bool, seed: u64) -> PyResult<Vec<f64>> {
        let t = params_from(Some(truth))?;
        let est = self
            .inner
            .identify(&t, &self.env, &self.sysid, learn, &mut rng::stream(seed, 0))
            .map_err(to_py)?;
        Ok(est.to_array().to_vec())
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn estimate(&self) -> Vec<f64> {
        self.inner.current().to_array().to_vec()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Gaussian policy loaded from a checkpoint; acts with its mean.
#[pyclass(name = "Policy")]
struct PyPolicy {
    inner: GaussianPolicy,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = Checkpoint::load(&path).and_then(|c| c.to_policy()).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn mean(&self, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.mean(&obs).map_err(to_py)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    #[getter]
    fn log_std(&self) -> Vec<f64> {
        self.inner.log_std.clone()
    }
}

#[pyfunction]
fn forward_kinematics(angles: [f64; 2], lengths: [f64; 2], base: [f64; 2]) -> [f64; 2] {
    env::forward_kinematics(angles, lengths, base)
}

#[pyfunction]
fn target_position(angles: [f64; 2], lengths: [f64; 2], base: [f64; 2]) -> [f64; 2] {
    env::target_position(angles, lengths, base)
}

#[pyfunction]
#[pyo3(signature = (weights, actions, clamp=true))]
fn blend_action(weights: Vec<f64>, actions: Vec<Vec<f64>>, clamp: bool) -> PyResult<Vec<f64>> {
    if clamp {
        blending::blend_action(&weights, &actions)
    } else {
        blending::blend_action_unclamped(&weights, &actions)
    }
    .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (scenario, seed=0))]
fn sample_impairments(scenario: &str, seed: u64) -> PyResult<Vec<f64>> {
    let s: Scenario = parse(scenario)?;
    Ok(env::sample_impairments(s, &EnvConfig::default(), &mut rng::stream(seed, 0)).to_array().to_vec())
}

#[pyfunction]
#[pyo3(signature = (truth, seed=0))]
fn measure(truth: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
    let t = params_from(Some(truth))?;
    Ok(measure_params(&t, &SysidConfig::default().measurement_std, &mut rng::stream(seed, 0)).z.to_vec())
}

/// Runs the oracle checks; returns `(name, passed, detail)` triples.
#[pyfunction]
fn run_selftest() -> Vec<(String, bool, String)> {
    selftest::run().into_iter().map(|c| (c.name.to_string(), c.passed, c.detail)).collect()
}

/// Runs the command-line interface with `args` (without the program name).
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| blendsysid_core::harness::cli::run(std::iter::once("blendsysid".to_string()).chain(args)))
}

#[pyfunction]
#[pyo3(signature = (out, impairment, seed=None, config=None))]
fn train_sub(py: Python<'_>, out: PathBuf, impairment: &str, seed: Option<u64>, config: Option<PathBuf>) -> PyResult<(u64, f64)> {
    let cfg = experiment_config(config)?;
    let imp: Scenario = parse(impairment)?;
    let sel = py
        .detach(|| pipeline::train_sub(&Layout::new(out), &cfg, imp, seed))
        .map_err(to_py)?;
    Ok((sel.seed, sel.best_avg_reward))
}

#[pyfunction]
#[pyo3(signature = (out, seed=None, config=None))]
fn train_dr(py: Python<'_>, out: PathBuf, seed: Option<u64>, config: Option<PathBuf>) -> PyResult<(u64, f64)> {
    let cfg = experiment_config(config)?;
    let sel = py.detach(|| pipeline::train_dr(&Layout::new(out), &cfg, seed)).map_err(to_py)?;
    Ok((sel.seed, sel.best_avg_reward))
}

#[pyfunction]
#[pyo3(signature = (out, sysid, seed=None, config=None))]
fn train_blend(py: Python<'_>, out: PathBuf, sysid: &str, seed: Option<u64>, config: Option<PathBuf>) -> PyResult<(u64, f64)> {
    let cfg = experiment_config(config)?;
    let kind: EstimatorKind = parse(sysid)?;
    let sel = py
        .detach(|| pipeline::train_blend(&Layout::new(out), &cfg, kind, seed))
        .map_err(to_py)?;
    Ok((sel.seed, sel.best_avg_reward))
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", &r.method)?;
    d.set_item("scenario", r.scenario.as_str())?;
    d.set_item("seed", r.seed)?;
    d.set_item("forces", r.forces.clone())?;
    let s = &r.summary;
    for (k, v) in [
        ("mean", s.mean),
        ("stdev", s.stdev),
        ("min", s.min),
        ("q1", s.q1),
        ("median", s.median),
        ("q3", s.q3),
        ("max", s.max),
    ] {
        d.set_item(k, v)?;
    }
    Ok(d)
}

/// Evaluates `method` on `scenario` from the checkpoints under `out`.
#[pyfunction]
#[pyo3(signature = (out, method, scenario, seed=None, config=None))]
fn evaluate<'py>(
    py: Python<'py>,
    out: PathBuf,
    method: &str,
    scenario: &str,
    seed: Option<u64>,
    config: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = experiment_config(config)?;
    let m: Method = parse(method)?;
    let s: Scenario = parse(scenario)?;
    let r = py
        .detach(|| pipeline::eval(&Layout::new(out), &cfg, m, s, seed))
        .map_err(to_py)?;
    report_dict(py, &r)
}

/// Writes the comparison CSVs; returns `(method, scenario, mean, stdev)` rows.
#[pyfunction]
#[pyo3(signature = (out, config=None))]
fn report(py: Python<'_>, out: PathBuf, config: Option<PathBuf>) -> PyResult<Vec<(String, String, f64, f64)>> {
    let cfg = experiment_config(config)?;
    let c = py
        .detach(|| pipeline::report_command(&Layout::new(out), &cfg))
        .map_err(to_py)?;
    Ok(c.table
        .into_iter()
        .map(|r| (r.method, r.scenario.to_string(), r.mean, r.stdev))
        .collect())
}

#[pymodule]
fn blendsysid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArmEnv>()?;
    m.add_class::<PyEstimator>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(forward_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(target_position, m)?)?;
    m.add_function(wrap_pyfunction!(blend_action, m)?)?;
    m.add_function(wrap_pyfunction!(sample_impairments, m)?)?;
    m.add_function(wrap_pyfunction!(measure, m)?)?;
    m.add_function(wrap_pyfunction!(run_selftest, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_function(wrap_pyfunction!(train_sub, m)?)?;
    m.add_function(wrap_pyfunction!(train_dr, m)?)?;
    m.add_function(wrap_pyfunction!(train_blend, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
