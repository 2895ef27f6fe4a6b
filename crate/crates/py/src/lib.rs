//! Python bindings.
//!
//! Structured values (configs, IR, cost reports, trials) cross the boundary as
//! plain dicts via JSON. Functions that need a space, input shape, head or
//! hardware take an optional run `config`: a dict, a JSON string, or `None` for
//! the defaults.

use std::path::Path;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use imc_nas::driver::{self, RunConfig, TrialLog};
use imc_nas::eval::surrogate_accuracy;
use imc_nas::fitness::{fitness_eval, CostMetric, FitnessSpec};
use imc_nas::imc::estimate_network;
use imc_nas::ir::expand_with;
use imc_nas::space::{ArchGenome, BlockSpec};
use imc_nas::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(s.to_str()?.to_owned());
    }
    let json = obj.py().import("json")?;
    json.call_method1("dumps", (obj,))?.extract()
}

fn from_json_text<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn to_py_json<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    from_json_text(py, &serde_json::to_string(value).map_err(value_err)?)
}

fn run_config(config: Option<&Bound<'_, PyAny>>) -> PyResult<RunConfig> {
    let config = match config {
        None => RunConfig::default(),
        Some(obj) => serde_json::from_str(&to_json_text(obj)?).map_err(value_err)?,
    };
    config.check().map_err(to_py_err)?;
    Ok(config)
}

/// A network as a sequence of `(type, kernels)` blocks.
#[pyclass(name = "Genome", module = "imc_nas_py", frozen, eq, hash, skip_from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PyGenome {
    inner: ArchGenome,
}

#[pymethods]
impl PyGenome {
    /// Parse `"VGG/16,RES/32,..."` or a genome JSON document.
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        let inner = ArchGenome::parse_any(text).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_blocks(blocks: Vec<(String, u32)>) -> PyResult<Self> {
        let blocks = blocks
            .into_iter()
            .map(|(t, k)| Ok(BlockSpec::new(t.parse().map_err(value_err)?, k)))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: ArchGenome::new(blocks) })
    }

    fn encode(&self) -> String {
        self.inner.encode()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn blocks(&self) -> Vec<(String, u32)> {
        self.inner
            .blocks
            .iter()
            .map(|b| (b.block_type.as_str().to_owned(), b.kernels))
            .collect()
    }

    fn hash_hex(&self) -> String {
        self.inner.hash_hex()
    }

    fn __str__(&self) -> String {
        self.inner.encode()
    }

    fn __repr__(&self) -> String {
        format!("Genome('{}')", self.inner.encode())
    }
}

fn genome_arg(obj: &Bound<'_, PyAny>) -> PyResult<ArchGenome> {
    if let Ok(g) = obj.cast::<PyGenome>() {
        return Ok(g.get().inner.clone());
    }
    ArchGenome::parse_any(&to_json_text(obj)?).map_err(to_py_err)
}

/// Number of genomes in the configured space, ignoring spatial validity.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn count_configurations<'py>(py: Python<'py>, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let n = run_config(config)?.space.count_configurations().to_string();
    py.import("builtins")?.getattr("int")?.call1((n,))
}

/// Raise `ValueError` if the genome is outside the space or over-pools the input.
#[pyfunction]
#[pyo3(signature = (genome, config=None))]
fn validate(genome: &Bound<'_, PyAny>, config: Option<&Bound<'_, PyAny>>) -> PyResult<()> {
    let config = run_config(config)?;
    let g = genome_arg(genome)?;
    config.space.validate(&g, config.input_shape).map_err(value_err)
}

/// Draw `n` spatially valid genomes.
#[pyfunction]
#[pyo3(signature = (n, seed=0, config=None))]
fn sample(n: usize, seed: u64, config: Option<&Bound<'_, PyAny>>) -> PyResult<Vec<PyGenome>> {
    let config = run_config(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let inner = config.space.sample_valid(config.input_shape, &mut rng).map_err(to_py_err)?;
            Ok(PyGenome { inner })
        })
        .collect()
}

/// The layer-level network as a dict.
#[pyfunction]
#[pyo3(signature = (genome, config=None))]
fn expand<'py>(py: Python<'py>, genome: &Bound<'py, PyAny>, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let config = run_config(config)?;
    let ir = expand_with(&genome_arg(genome)?, config.input_shape, &config.head, &config.expand)
        .map_err(to_py_err)?;
    to_py_json(py, &ir)
}

/// Latency (ms), energy (mJ) and the per-layer breakdown.
#[pyfunction]
#[pyo3(signature = (genome, config=None))]
fn estimate<'py>(py: Python<'py>, genome: &Bound<'py, PyAny>, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let config = run_config(config)?;
    let ir = expand_with(&genome_arg(genome)?, config.input_shape, &config.head, &config.expand)
        .map_err(to_py_err)?;
    let report = estimate_network(&ir, &config.hardware).map_err(to_py_err)?;
    to_py_json(py, &report)
}

#[pyfunction]
#[pyo3(signature = (genome, config=None))]
fn surrogate(genome: &Bound<'_, PyAny>, config: Option<&Bound<'_, PyAny>>) -> PyResult<f64> {
    let config = run_config(config)?;
    let ir = expand_with(&genome_arg(genome)?, config.input_shape, &config.head, &config.expand)
        .map_err(to_py_err)?;
    Ok(surrogate_accuracy(&ir, &config.surrogate).accuracy)
}

/// `accuracy^n`, divided by latency for `acc_lat` or energy for `acc_en`.
#[pyfunction]
#[pyo3(signature = (accuracy, latency_ms, energy_mj, ff="acc", acc_exponent=1.0))]
fn fitness(accuracy: f64, latency_ms: f64, energy_mj: f64, ff: &str, acc_exponent: f64) -> PyResult<f64> {
    let metric: CostMetric = ff.parse().map_err(value_err)?;
    fitness_eval(accuracy, latency_ms, energy_mj, &FitnessSpec::new(metric, acc_exponent)).map_err(value_err)
}

/// Dataset preset as a config dict.
#[pyfunction]
fn preset<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
    let config = RunConfig::preset(name).ok_or_else(|| value_err(format!("unknown preset {name:?}")))?;
    to_py_json(py, &config)
}

/// Run or resume a search; returns the trials as dicts.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn run_search<'py>(py: Python<'py>, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let config = run_config(config)?;
    let log = py.detach(|| driver::run_search(&config)).map_err(to_py_err)?;
    to_py_json(py, &log.trials)
}

fn load_log(log: &str) -> PyResult<TrialLog> {
    let path = Path::new(log);
    if !log.contains('\n') && path.is_file() {
        TrialLog::load(path).map_err(to_py_err)
    } else {
        TrialLog::parse(log, Path::new("<string>")).map_err(to_py_err)
    }
}

/// Top `k` successful trials of a log (path or JSONL text).
#[pyfunction]
#[pyo3(signature = (log, k=5))]
fn report<'py>(py: Python<'py>, log: &str, k: usize) -> PyResult<Bound<'py, PyAny>> {
    let log = load_log(log)?;
    let rows = driver::report_best(&log, k).map_err(to_py_err)?;
    to_py_json(py, &rows)
}

/// Scatter CSV of a log (path or JSONL text).
#[pyfunction]
fn scatter(log: &str) -> PyResult<String> {
    driver::export_scatter(&load_log(log)?).map_err(to_py_err)
}

#[pymodule]
fn imc_nas_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGenome>()?;
    m.add_function(wrap_pyfunction!(count_configurations, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(expand, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate, m)?)?;
    m.add_function(wrap_pyfunction!(fitness, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_search, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(scatter, m)?)?;
    Ok(())
}
