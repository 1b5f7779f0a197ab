//! Python bindings: the reward engine, the samplers and the exploration loop.

use kme::{ClusterModel, DistributionSpec, ExploreConfig, FChoice, InitPolicy, KmeError, ObjectiveSpec, RewardEngine, SparseBoxEnv};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: KmeError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_f(f: &str) -> PyResult<FChoice> {
    f.parse().map_err(py_err)
}

fn parse_init(init: &str) -> PyResult<InitPolicy> {
    match init {
        "zero" => Ok(InitPolicy::Zero),
        "first_points" => Ok(InitPolicy::FirstPoints),
        other => Err(PyValueError::new_err(format!("unknown init {other:?}"))),
    }
}

/// Intrinsic-reward engine over an additively-weighted online k-means.
#[pyclass(name = "RewardEngine", module = "kme_py", skip_from_py_object)]
#[derive(Clone)]
struct PyRewardEngine {
    inner: RewardEngine,
}

#[pymethods]
impl PyRewardEngine {
    #[new]
    #[pyo3(signature = (k, d, alpha = 0.05, kappa = 1e-4, f = "sqrt", init = "zero"))]
    fn new(k: usize, d: usize, alpha: f64, kappa: f64, f: &str, init: &str) -> PyResult<Self> {
        let model = ClusterModel::new(k, d, alpha, kappa, parse_init(init)?).map_err(py_err)?;
        let spec = ObjectiveSpec {
            f_choice: parse_f(f)?,
            ..ObjectiveSpec::default()
        };
        Ok(Self {
            inner: RewardEngine::new(model, spec),
        })
    }

    /// Engine with explicit centres (one list per cluster) and counts.
    #[staticmethod]
    #[pyo3(signature = (centers, counts, alpha = 0.05, kappa = 1e-4, f = "sqrt"))]
    fn from_centers(centers: Vec<Vec<f64>>, counts: Vec<u64>, alpha: f64, kappa: f64, f: &str) -> PyResult<Self> {
        let d = centers.first().map_or(0, Vec::len);
        if centers.iter().any(|c| c.len() != d) {
            return Err(PyValueError::new_err("centres must share one dimension"));
        }
        let flat = centers.concat();
        let model = ClusterModel::from_parts(flat, counts, d, alpha, kappa).map_err(py_err)?;
        let spec = ObjectiveSpec {
            f_choice: parse_f(f)?,
            ..ObjectiveSpec::default()
        };
        Ok(Self {
            inner: RewardEngine::new(model, spec),
        })
    }

    /// Reward for `state` without changing the engine.
    fn peek_reward(&self, state: Vec<f64>) -> PyResult<f64> {
        self.inner.peek_reward(&state).map_err(py_err)
    }

    /// Reward for `state`, applying the update.
    fn commit_reward(&mut self, state: Vec<f64>) -> PyResult<f64> {
        self.inner.commit_reward(&state).map_err(py_err)
    }

    fn batch_replay(&mut self, states: Vec<Vec<f64>>, shuffle_seed: u64) -> PyResult<()> {
        self.inner.batch_replay(&states, shuffle_seed).map_err(py_err)
    }

    fn objective(&self) -> f64 {
        self.inner.objective()
    }

    fn entropy_lower_bound(&self) -> f64 {
        self.inner.entropy_lower_bound()
    }

    /// Fraction of commits that triggered a large cache rescan; `None` before any commit.
    fn pathological_fraction(&self) -> Option<f64> {
        self.inner.pathological_fraction().ok()
    }

    #[getter]
    fn commit_count(&self) -> u64 {
        self.inner.commit_count()
    }

    #[getter]
    fn centers(&self) -> Vec<Vec<f64>> {
        let m = self.inner.model();
        (0..m.k()).map(|i| m.center(i).to_vec()).collect()
    }

    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.inner.model().counts().to_vec()
    }

    fn state_hash(&self) -> u64 {
        self.inner.state_hash()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RewardEngine::from_json(json).map_err(py_err)?,
        })
    }

    fn copy(&self) -> Self {
        self.clone()
    }

    fn __repr__(&self) -> String {
        let m = self.inner.model();
        format!(
            "RewardEngine(k={}, d={}, alpha={}, kappa={}, commits={})",
            m.k(),
            m.d(),
            m.alpha(),
            m.kappa(),
            self.inner.commit_count()
        )
    }
}

/// Draws `n` points from a distribution given as JSON.
#[pyfunction]
fn sample(spec_json: &str, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let spec: DistributionSpec =
        serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    kme::sample(&spec, n, seed).map_err(py_err)
}

/// Closed-form differential entropy of a distribution given as JSON, if known.
#[pyfunction]
fn true_entropy(spec_json: &str) -> PyResult<Option<f64>> {
    let spec: DistributionSpec =
        serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(spec.true_entropy())
}

/// Trains on the corner-goal box and returns the learning record as a list of
/// `(batch_index, env_steps, extrinsic_return, intrinsic_return, coverage)`.
#[pyfunction]
#[pyo3(signature = (config_json = None, dims = 2, with_engine = true))]
fn explore(
    py: Python<'_>,
    config_json: Option<&str>,
    dims: usize,
    with_engine: bool,
) -> PyResult<Vec<(usize, usize, f64, f64, f64)>> {
    let cfg: ExploreConfig = match config_json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => ExploreConfig::default(),
    };
    let env = SparseBoxEnv::corner(dims).map_err(py_err)?;
    let report = py
        .detach(|| {
            if with_engine {
                kme::train(&cfg, &env)
            } else {
                kme::train_without_engine(&cfg, &env)
            }
        })
        .map_err(py_err)?;
    Ok(report
        .records
        .iter()
        .map(|r| (r.batch_index, r.env_steps, r.extrinsic_return, r.intrinsic_return, r.coverage))
        .collect())
}

#[pymodule]
fn kme_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRewardEngine>()?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(true_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(explore, m)?)?;
    Ok(())
}
