//! Python module `san_til`.
//!
//! Configurations, reports, datasets and checkpoints are wrapped as classes;
//! training entry points release the GIL while they run.

use std::path::PathBuf;

use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use san_til::datasets::{self as data, Dataset as CoreDataset};
use san_til::harness::{self, Checkpoint as CoreCheckpoint, FetchSource, FetchTarget, HarnessError, Overrides, RunConfig as CoreConfig, RunReport as CoreReport};
use san_til::tensorcore::{self as tc, Tensor};
use san_til::tilengine::{Split, StrategyKind};

pyo3::create_exception!(san_til, SanTilError, PyException, "Base class of every san_til error.");
pyo3::create_exception!(san_til, ConfigError, SanTilError, "Invalid configuration; exit code 1 on the command line.");
pyo3::create_exception!(san_til, DataError, SanTilError, "Missing or corrupt dataset files; exit code 2.");
pyo3::create_exception!(san_til, RunError, SanTilError, "Failure while running; exit code 3.");

fn to_py(e: HarnessError) -> PyErr {
    let msg = e.to_string();
    match e.exit_code() {
        1 => ConfigError::new_err(msg),
        2 => DataError::new_err(msg),
        _ => RunError::new_err(msg),
    }
}

fn data_err(e: data::DataError) -> PyErr {
    to_py(e.into())
}

fn root(data_root: Option<PathBuf>) -> PathBuf {
    harness::resolve_data_root(data_root.as_deref())
}

fn parse_split(split: &str) -> PyResult<Split> {
    match split {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(ConfigError::new_err(format!("unknown split {other:?}; expected train, val or test"))),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// A validated run configuration.
#[pyclass(module = "san_til", from_py_object)]
#[derive(Clone)]
struct RunConfig {
    inner: CoreConfig,
}

#[pymethods]
impl RunConfig {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        CoreConfig::from_json(text).map(|inner| RunConfig { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreConfig::load(&path).map(|inner| RunConfig { inner }).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Returns a copy with command-line style overrides applied.
    #[pyo3(signature = (seeds=None, epochs=None, fast=false, out=None))]
    fn with_overrides(&self, seeds: Option<Vec<u64>>, epochs: Option<usize>, fast: bool, out: Option<PathBuf>) -> PyResult<Self> {
        let mut inner = self.inner.clone();
        inner.apply(&Overrides { seeds, epochs, fast, output_dir: out }).map_err(to_py)?;
        Ok(RunConfig { inner })
    }

    #[getter]
    fn strategy(&self) -> &'static str {
        self.inner.strategy.name()
    }

    #[getter]
    fn dataset(&self) -> &'static str {
        self.inner.dataset.name()
    }

    #[getter]
    fn num_tasks(&self) -> usize {
        self.inner.num_tasks
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(strategy={:?}, dataset={:?}, num_tasks={}, epochs={}, seeds={:?})", self.strategy(), self.dataset(), self.inner.num_tasks, self.inner.epochs, self.inner.seeds)
    }
}

/// Results of a multi-seed run. Accuracies are fractions in [0, 1].
#[pyclass(module = "san_til")]
struct RunReport {
    inner: CoreReport,
}

#[pymethods]
impl RunReport {
    #[staticmethod]
    fn read(dir: PathBuf) -> PyResult<Self> {
        CoreReport::read(&dir).map(|inner| RunReport { inner }).map_err(to_py)
    }

    #[getter]
    fn mean_accuracy(&self) -> f64 {
        self.inner.aggregate.mean_accuracy.mean
    }

    #[getter]
    fn std_accuracy(&self) -> f64 {
        self.inner.aggregate.mean_accuracy.std
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.aggregate.param_count
    }

    #[getter]
    fn megabytes(&self) -> f64 {
        self.inner.aggregate.megabytes
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.runs.iter().map(|r| r.seed).collect()
    }

    /// Final accuracy of every task for run `index`.
    fn final_accuracies(&self, index: usize) -> PyResult<Vec<f64>> {
        self.run(index).map(|r| r.final_accuracies.clone())
    }

    /// Row `t` holds accuracies of tasks `0..=t` right after training task `t`.
    fn forgetting(&self, index: usize) -> PyResult<Vec<Vec<f64>>> {
        self.run(index).map(|r| r.forgetting.clone())
    }

    fn summary_csv(&self) -> PyResult<String> {
        self.inner.summary_csv().map_err(to_py)
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("report serializes")
    }

    /// The whole report as plain Python containers.
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.to_json())
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    fn __repr__(&self) -> String {
        format!("RunReport(mean_accuracy={:.4}, std={:.4}, runs={})", self.mean_accuracy(), self.std_accuracy(), self.inner.runs.len())
    }
}

impl RunReport {
    fn run(&self, index: usize) -> PyResult<&san_til::tilengine::SequenceReport> {
        self.inner.runs.get(index).ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(format!("run {index} out of range")))
    }
}

/// Labelled images with pixel values in [0, 1].
#[pyclass(module = "san_til")]
struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let [c, h, w] = self.inner.sample_shape();
        (c, h, w)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    fn class_histogram(&self) -> Vec<usize> {
        self.inner.class_histogram()
    }

    /// Flattened pixels of sample `i` in channel-major order.
    fn sample(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.inner.len() {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!("sample {i} out of range for {} samples", self.inner.len())));
        }
        Ok(self.inner.sample(i).to_vec())
    }

    fn provenance<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &serde_json::to_string(&self.inner.provenance).expect("provenance serializes"))
    }

    fn __repr__(&self) -> String {
        format!("Dataset(len={}, shape={:?}, num_classes={})", self.inner.len(), self.shape(), self.inner.num_classes)
    }
}

/// A trained incremental state saved by `run`.
#[pyclass(module = "san_til")]
struct Checkpoint {
    inner: CoreCheckpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreCheckpoint::load(&path).map(|inner| Checkpoint { inner }).map_err(to_py)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn strategy(&self) -> &'static str {
        self.inner.state.strategy.name()
    }

    #[getter]
    fn trained_tasks(&self) -> usize {
        self.inner.state.trained_tasks()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.state.model_size().param_count
    }

    #[getter]
    fn megabytes(&self) -> f64 {
        self.inner.state.model_size().megabytes
    }

    #[getter]
    fn config(&self) -> RunConfig {
        RunConfig { inner: self.inner.config.clone() }
    }

    /// True when shared blocks still equal their post-first-task values.
    fn shared_frozen(&self) -> bool {
        self.inner.state.verify_shared_frozen().is_ok()
    }
}

/// Trains every seed in memory and returns the report without writing files.
#[pyfunction]
#[pyo3(signature = (config, data_root=None))]
fn execute(py: Python<'_>, config: &RunConfig, data_root: Option<PathBuf>) -> PyResult<RunReport> {
    let cfg = config.inner.clone();
    let root = root(data_root);
    py.detach(move || harness::execute(&cfg, &root)).map(|o| RunReport { inner: o.report }).map_err(to_py)
}

/// Trains every seed and writes report.json, summary.csv and checkpoints.
#[pyfunction]
#[pyo3(signature = (config, data_root=None))]
fn run(py: Python<'_>, config: &RunConfig, data_root: Option<PathBuf>) -> PyResult<RunReport> {
    let cfg = config.inner.clone();
    let root = root(data_root);
    py.detach(move || harness::run(&cfg, &root)).map(|inner| RunReport { inner }).map_err(to_py)
}

/// One run per adjustment kernel size; returns dicts with kernel, param_count, megabytes and accuracy.
#[pyfunction]
#[pyo3(signature = (config, widths, data_root=None))]
fn sweep_size<'py>(py: Python<'py>, config: &RunConfig, widths: Vec<usize>, data_root: Option<PathBuf>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.inner.clone();
    let root = root(data_root);
    let points = py.detach(move || harness::sweep_size(&cfg, &widths, &root)).map_err(to_py)?;
    points
        .into_iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("kernel", p.kernel)?;
            d.set_item("param_count", p.param_count)?;
            d.set_item("megabytes", p.megabytes)?;
            d.set_item("mean_accuracy", p.mean_accuracy.mean)?;
            d.set_item("std_accuracy", p.mean_accuracy.std)?;
            d.set_item("output_dir", p.output_dir)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (config, orders, data_root=None))]
fn ablate_order(py: Python<'_>, config: &RunConfig, orders: Vec<Vec<usize>>, data_root: Option<PathBuf>) -> PyResult<Vec<RunReport>> {
    let cfg = config.inner.clone();
    let root = root(data_root);
    let reports = py.detach(move || harness::ablate_order(&cfg, &orders, &root)).map_err(to_py)?;
    Ok(reports.into_iter().map(|inner| RunReport { inner }).collect())
}

/// Writes per-sample features of a checkpoint to `out` and returns the row count.
#[pyfunction]
#[pyo3(signature = (config, checkpoint, out, split="test", data_root=None))]
fn dump_embeddings(py: Python<'_>, config: &RunConfig, checkpoint: PathBuf, out: PathBuf, split: &str, data_root: Option<PathBuf>) -> PyResult<usize> {
    let split = parse_split(split)?;
    let cfg = config.inner.clone();
    let root = root(data_root);
    py.detach(move || harness::dump_embeddings(&cfg, &checkpoint, split, &out, &root)).map_err(to_py)
}

/// Downloads, verifies and unpacks `dataset`; returns the written paths.
#[pyfunction]
#[pyo3(signature = (dataset, data_root=None, url=None, sha256=None))]
fn fetch_data(py: Python<'_>, dataset: &str, data_root: Option<PathBuf>, url: Option<String>, sha256: Option<String>) -> PyResult<Vec<PathBuf>> {
    let target = FetchTarget::parse(dataset).ok_or_else(|| ConfigError::new_err(format!("unknown dataset {dataset:?}")))?;
    let mut source = match url {
        Some(url) => FetchSource { url, sha256: None },
        None => FetchSource::default_for(target),
    };
    if sha256.is_some() {
        source.sha256 = sha256;
    }
    let root = root(data_root);
    py.detach(move || harness::fetch_data(target, &root, &source)).map_err(to_py)
}

/// Finite-difference check of every differentiable operation.
#[pyfunction]
#[pyo3(signature = (instances=20, seed=0))]
fn grad_check<'py>(py: Python<'py>, instances: usize, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let checks = py.detach(move || harness::grad_check_suite(instances, seed)).map_err(|e| to_py(e.into()))?;
    checks
        .into_iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("passed", c.passed())?;
            d.set_item("op", c.op)?;
            d.set_item("instances", c.instances)?;
            d.set_item("coordinates", c.coordinates)?;
            d.set_item("max_rel_error", c.max_rel_error)?;
            d.set_item("tolerance", c.tolerance)?;
            Ok(d)
        })
        .collect()
}

/// `‖I − A·Aᵀ‖²_F` of a square matrix given as rows.
#[pyfunction]
fn orthogonality_penalty(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(ConfigError::new_err("expected a non-empty square matrix"));
    }
    let a = Tensor::new(&[n, n], rows.concat()).map_err(|e| RunError::new_err(e.to_string()))?;
    tc::orthogonality_penalty(&a).map_err(|e| RunError::new_err(e.to_string()))
}

#[pyfunction]
#[pyo3(signature = (num_classes, per_class, shape=(1, 8, 8), seed=0))]
fn synthetic_dataset(num_classes: usize, per_class: usize, shape: (usize, usize, usize), seed: u64) -> PyResult<Dataset> {
    data::synthetic_dataset(num_classes, per_class, [shape.0, shape.1, shape.2], seed).map(|inner| Dataset { inner }).map_err(data_err)
}

/// MNIST train and test pools from `<root>/mnist`.
#[pyfunction]
#[pyo3(signature = (data_root=None))]
fn load_mnist(py: Python<'_>, data_root: Option<PathBuf>) -> PyResult<(Dataset, Dataset)> {
    let root = root(data_root);
    let (train, test) = py.detach(move || data::load_mnist(&root)).map_err(data_err)?;
    Ok((Dataset { inner: train }, Dataset { inner: test }))
}

#[pyfunction]
fn strategies() -> Vec<&'static str> {
    StrategyKind::ALL.iter().map(|s| s.name()).collect()
}

#[pymodule(name = "san_til")]
fn san_til_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("SanTilError", py.get_type::<SanTilError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("RunError", py.get_type::<RunError>())?;
    m.add_class::<RunConfig>()?;
    m.add_class::<RunReport>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(execute, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_size, m)?)?;
    m.add_function(wrap_pyfunction!(ablate_order, m)?)?;
    m.add_function(wrap_pyfunction!(dump_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(fetch_data, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(orthogonality_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_mnist, m)?)?;
    m.add_function(wrap_pyfunction!(strategies, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
