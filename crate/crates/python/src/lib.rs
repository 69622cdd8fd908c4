//! Python bindings for the `fastlloyd` crate.

use fastlloyd::{
    Algo, CentroidState, ClientView, Dataset, Error, Experiment, NoiseSource, ProtocolParams, RunReport, SweepConfig,
    SynthSpec, TransportOptions,
};
use pyo3::exceptions::{PyOSError, PyOverflowError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use std::time::Duration;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::Overflow { .. } => PyOverflowError::new_err(e.to_string()),
        Error::ProtocolViolation(_) | Error::RoundTimeout { .. } => PyRuntimeError::new_err(e.to_string()),
        Error::Io(_) | Error::Csv(_) => PyOSError::new_err(e.to_string()),
    }
}

fn dataset(rows: Vec<Vec<f64>>) -> PyResult<Dataset> {
    Dataset::from_rows(&rows).map_err(to_py)
}

fn rows(values: &[f64], d: usize) -> Vec<Vec<f64>> {
    values.chunks(d).map(<[f64]>::to_vec).collect()
}

fn algo(name: &str) -> PyResult<Algo> {
    name.parse().map_err(to_py)
}

/// Resolved protocol parameters. Keyword arguments use the config keys.
#[pyclass(name = "Params", from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: ProtocolParams,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = ProtocolParams::default();
        if let Some(kwargs) = kwargs {
            for (key, value) in kwargs.iter() {
                let key: String = key.extract()?;
                let value = if value.is_none() { "auto".to_string() } else { value.str()?.to_string() };
                inner.set(&key, &value).map_err(to_py)?;
            }
        }
        Ok(PyParams { inner })
    }

    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        Ok(PyParams { inner: ProtocolParams::from_config_str(text).map_err(to_py)? })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let value = if value.is_none() { "auto".to_string() } else { value.str()?.to_string() };
        self.inner.set(key, &value).map_err(to_py)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    fn config(&self) -> String {
        self.inner.to_config_string()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    #[getter]
    fn clients(&self) -> usize {
        self.inner.clients
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!("Params(k={}, d={}, epsilon={}, clients={}, seed={})", p.k, p.d, p.epsilon, p.clients, p.seed)
    }
}

/// Report of one finished run.
#[pyclass(name = "Report", from_py_object)]
#[derive(Clone)]
struct PyReport {
    inner: RunReport,
}

#[pymethods]
impl PyReport {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyReport { inner: RunReport::from_json(text).map_err(to_py)? })
    }

    #[pyo3(signature = (deterministic = false))]
    fn to_json(&self, deterministic: bool) -> String {
        if deterministic {
            self.inner.deterministic().to_json()
        } else {
            self.inner.to_json()
        }
    }

    #[getter]
    fn algo(&self) -> &'static str {
        self.inner.algo.name()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn nicv(&self) -> f64 {
        self.inner.nicv
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn bytes_per_iteration(&self) -> u64 {
        self.inner.bytes_per_iteration
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    #[getter]
    fn centroids(&self) -> Vec<Vec<f64>> {
        let c = &self.inner.centroids;
        rows(&c.centroids, c.d)
    }

    fn __repr__(&self) -> String {
        format!("Report(algo={}, T={}, nicv={:.6})", self.inner.algo.name(), self.iterations(), self.inner.nicv)
    }
}

/// Noise multiplier `sigma` such that one `1/sigma`-GDP release meets `(epsilon, delta)`.
#[pyfunction]
fn calibrate_sigma(epsilon: f64, delta: f64) -> PyResult<f64> {
    fastlloyd::calibrate_sigma(epsilon, delta).map_err(to_py)
}

#[pyfunction]
fn gdp_delta(epsilon: f64, theta: f64) -> f64 {
    fastlloyd::gdp_delta(epsilon, theta)
}

#[pyfunction]
fn split_sigma(sigma: f64, d: usize) -> (f64, f64) {
    fastlloyd::split_sigma(sigma, d)
}

#[pyfunction]
fn default_delta(n: usize) -> PyResult<f64> {
    fastlloyd::default_delta(n).map_err(to_py)
}

/// `(points, labels)` of a synthetic dataset; outliers have label -1.
#[pyfunction]
#[pyo3(signature = (spec = ""))]
fn generate_synth(spec: &str) -> PyResult<(Vec<Vec<f64>>, Vec<i64>)> {
    let spec: SynthSpec = spec.parse().map_err(to_py)?;
    let s = fastlloyd::generate_synth(&spec).map_err(to_py)?;
    Ok((rows(s.data.values(), s.data.d()), s.labels))
}

#[pyfunction]
fn nicv(data: Vec<Vec<f64>>, centroids: Vec<Vec<f64>>) -> PyResult<f64> {
    let data = dataset(data)?;
    let c = dataset(centroids)?;
    if c.d() != data.d() {
        return Err(PyValueError::new_err("centroids and data have different dimensions"));
    }
    Ok(fastlloyd::nicv(&data, &CentroidState::new(c.n(), c.d(), c.values().to_vec())))
}

/// Run one algorithm. `mode` is `local` (threads over pipes), `tcp`
/// (loopback sockets) or `central` (single loop, no transport).
#[pyfunction]
#[pyo3(signature = (algo_name, data, params = None, noise_seed = None, mode = "local", latency_ms = 0.0))]
fn run(
    py: Python<'_>,
    algo_name: &str,
    data: Vec<Vec<f64>>,
    params: Option<PyParams>,
    noise_seed: Option<u64>,
    mode: &str,
    latency_ms: f64,
) -> PyResult<PyReport> {
    let algo = algo(algo_name)?;
    let data = dataset(data)?;
    let mut params = params.map(|p| p.inner).unwrap_or_default();
    params.d = data.d();
    if !(latency_ms >= 0.0 && latency_ms.is_finite()) {
        return Err(PyValueError::new_err("latency_ms must be non-negative"));
    }
    let opts = TransportOptions { latency: Duration::from_secs_f64(latency_ms / 1e3), ..TransportOptions::default() };
    let source = noise_seed.map_or(NoiseSource::Entropy, NoiseSource::Seeded);
    let mode = mode.to_string();
    py.detach(move || {
        let exp = Experiment::new(algo, &params, &data)?;
        let out = match mode.as_str() {
            "local" => exp.run_local(source, opts)?,
            "tcp" => exp.run_loopback_tcp(source, opts)?,
            "central" => exp.run_central(source)?,
            other => return Err(Error::Config(format!("unknown mode `{other}`"))),
        };
        Ok(exp.report(&data, ClientView::from(&out), noise_seed, &mode))
    })
    .map(|inner| PyReport { inner })
    .map_err(to_py)
}

/// Run every `(algo, eps, run)` cell and return one dict per cell.
#[pyfunction]
#[pyo3(signature = (data, params = None, algos = None, eps = None, runs = 10, noise_seed = 0))]
fn sweep<'py>(
    py: Python<'py>,
    data: Vec<Vec<f64>>,
    params: Option<PyParams>,
    algos: Option<Vec<String>>,
    eps: Option<Vec<f64>>,
    runs: usize,
    noise_seed: u64,
) -> PyResult<Bound<'py, PyList>> {
    let data = dataset(data)?;
    let mut params = params.map(|p| p.inner).unwrap_or_default();
    params.d = data.d();
    let algos = match algos {
        Some(names) => names.iter().map(|n| algo(n)).collect::<PyResult<_>>()?,
        None => Algo::ALL.to_vec(),
    };
    let eps = eps.unwrap_or_else(|| vec![0.1, 0.25, 0.5, 0.75, 1.0]);
    let cfg = SweepConfig { params, algos, eps, runs, noise_seed };
    let rows = py.detach(|| fastlloyd::sweep(&cfg, &data)).map_err(to_py)?;
    let out = PyList::empty(py);
    for r in rows {
        let row = PyDict::new(py);
        row.set_item("algo", r.algo.name())?;
        row.set_item("eps", r.eps)?;
        row.set_item("run", r.run)?;
        row.set_item("nicv", r.nicv)?;
        row.set_item("iterations", r.iterations)?;
        row.set_item("sigma", r.sigma)?;
        row.set_item("seed", r.seed)?;
        out.append(row)?;
    }
    Ok(out)
}

#[pymodule]
fn fastlloyd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(calibrate_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(gdp_delta, m)?)?;
    m.add_function(wrap_pyfunction!(split_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(default_delta, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synth, m)?)?;
    m.add_function(wrap_pyfunction!(nicv, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
