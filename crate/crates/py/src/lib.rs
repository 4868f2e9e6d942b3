//! Python bindings. The extension module is importable as `physadv`.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use physadv::fixture::DeskFixture;
use physadv::imaging as png_io;
use physadv::oracle::Concurrency;
use physadv::pipeline::{self, RunHooks};
use physadv::{
    BinaryGrid, Error, HardLabelOracle, Label, Mask, OracleSession, Perturbation, Phase, QueryLedger,
    SurvivabilityEstimator,
};

create_exception!(physadv, PhysadvError, PyException);
create_exception!(physadv, ConfigError, PhysadvError);
create_exception!(physadv, OracleError, PhysadvError);
create_exception!(physadv, BudgetExceededError, PhysadvError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config(_) => ConfigError::new_err(msg),
        Error::OracleIo(_) | Error::Protocol(_) | Error::InitializationFailure(_) => OracleError::new_err(msg),
        Error::BudgetExceeded { .. } => BudgetExceededError::new_err(msg),
        _ => PhysadvError::new_err(msg),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PhysadvError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

/// A planar float image with values in `[0, 1]`, stored row-major, channel last.
#[pyclass(name = "Image", module = "physadv", skip_from_py_object)]
#[derive(Clone)]
struct PyImage(physadv::Image);

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        physadv::Image::new(width, height, channels, data).map(PyImage).map_err(to_py)
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, channels: usize, value: f64) -> PyResult<Self> {
        physadv::Image::filled(width, height, channels, value).map(PyImage).map_err(to_py)
    }

    #[staticmethod]
    fn read_png(path: PathBuf) -> PyResult<Self> {
        png_io::read_png(path).map(PyImage).map_err(to_py)
    }

    fn write_png(&self, path: PathBuf) -> PyResult<()> {
        png_io::write_png(&self.0, path).map_err(to_py)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.0.channels()
    }

    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn get(&self, x: usize, y: usize, c: usize) -> PyResult<f64> {
        if x >= self.0.width() || y >= self.0.height() || c >= self.0.channels() {
            return Err(pyo3::exceptions::PyIndexError::new_err("pixel out of range"));
        }
        Ok(self.0.get(x, y, c))
    }

    fn resize(&self, width: usize, height: usize) -> PyResult<Self> {
        self.0.resize_bilinear(width, height).map(PyImage).map_err(to_py)
    }

    fn mean_squared_distance(&self, other: &PyImage) -> PyResult<f64> {
        self.0.mean_squared_distance(&other.0).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{}x{})", self.0.width(), self.0.height(), self.0.channels())
    }
}

/// A binary pixel grid, used for object regions and masks.
#[pyclass(name = "Grid", module = "physadv", skip_from_py_object)]
#[derive(Clone)]
struct PyGrid(BinaryGrid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(width: usize, height: usize, bits: Vec<bool>) -> PyResult<Self> {
        BinaryGrid::new(width, height, bits).map(PyGrid).map_err(to_py)
    }

    #[staticmethod]
    fn full(width: usize, height: usize) -> Self {
        PyGrid(BinaryGrid::full(width, height))
    }

    #[staticmethod]
    fn read_png(path: PathBuf) -> PyResult<Self> {
        png_io::read_mask_png(path).map(PyGrid).map_err(to_py)
    }

    fn write_png(&self, path: PathBuf) -> PyResult<()> {
        png_io::write_mask_png(&self.0, path).map_err(to_py)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    fn bits(&self) -> Vec<bool> {
        self.0.bits().to_vec()
    }

    fn count(&self) -> usize {
        self.0.count()
    }

    fn __repr__(&self) -> String {
        format!("Grid({}x{}, {} set)", self.0.width(), self.0.height(), self.0.count())
    }
}

/// Sampleable physical transforms.
#[pyclass(name = "TransformDistribution", module = "physadv", skip_from_py_object)]
#[derive(Clone)]
struct PyTransforms(physadv::TransformDistribution);

#[pymethods]
impl PyTransforms {
    /// `gtsrb`, `alpr` or `identity`.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        physadv::TransformDistribution::preset(name).map(PyTransforms).map_err(to_py)
    }

    /// Parameters of the `index`-th transform of stream `seed`.
    fn draw<'py>(&self, py: Python<'py>, seed: u64, index: u64) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.0.draw(seed, index, 0))
    }

    /// Applies the `index`-th transform of stream `seed` to `image`.
    fn apply(&self, image: &PyImage, object: &PyGrid, seed: u64, index: u64) -> PyResult<PyImage> {
        let (w, h) = (image.0.width(), image.0.height());
        let t = self.0.prepare_index(seed, index, w, h, &object.0).map_err(to_py)?;
        t.apply(&image.0).map(PyImage).map_err(to_py)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.0)
    }
}

/// A hard-label classifier implemented in Rust (builtin, process or HTTP).
#[pyclass(name = "Oracle", module = "physadv")]
struct PyOracle(Arc<dyn HardLabelOracle>);

#[pymethods]
impl PyOracle {
    fn __call__(&self, py: Python<'_>, image: &PyImage) -> PyResult<i64> {
        let img = image.0.clone();
        let o = self.0.clone();
        py.detach(move || o.classify(&img)).map(|l| l.0).map_err(to_py)
    }
}

/// Adapts a Python callable `f(Image) -> int` to the oracle trait.
struct CallableOracle(Py<PyAny>);

impl HardLabelOracle for CallableOracle {
    fn classify(&self, img: &physadv::Image) -> physadv::Result<Label> {
        Python::attach(|py| {
            let r = self.0.call1(py, (PyImage(img.clone()),))?;
            r.bind(py).extract::<i64>()
        })
        .map(Label)
        .map_err(|e| Error::OracleIo(format!("python oracle: {e}")))
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }
}

fn resolve_oracle(
    oracle: Option<&Bound<'_, PyAny>>,
    cfg: &PyRunConfig,
) -> PyResult<Arc<dyn HardLabelOracle>> {
    match oracle {
        None => cfg.inner.oracle(&cfg.base).map_err(to_py),
        Some(o) => {
            if let Ok(r) = o.cast::<PyOracle>() {
                return Ok(r.borrow().0.clone());
            }
            if !o.is_callable() {
                return Err(pyo3::exceptions::PyTypeError::new_err("oracle must be callable"));
            }
            Ok(Arc::new(CallableOracle(o.clone().unbind())))
        }
    }
}

/// A run configuration. Relative paths resolve against the directory the
/// file was loaded from.
#[pyclass(name = "RunConfig", module = "physadv", skip_from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: pipeline::RunConfig,
    base: PathBuf,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    fn new() -> Self {
        PyRunConfig { inner: pipeline::RunConfig::default(), base: PathBuf::from(".") }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = pipeline::RunConfig::from_toml(text).map_err(to_py)?;
        Ok(PyRunConfig { inner, base: PathBuf::from(".") })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, base) = pipeline::RunConfig::load(path).map_err(to_py)?;
        Ok(PyRunConfig { inner, base })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    #[getter]
    fn get_seed(&self) -> u64 {
        self.inner.run.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.run.seed = v;
    }

    #[getter]
    fn get_holdout_n(&self) -> usize {
        self.inner.run.holdout_n
    }

    #[setter]
    fn set_holdout_n(&mut self, v: usize) {
        self.inner.run.holdout_n = v;
    }

    /// Boost query budget.
    #[getter]
    fn get_budget(&self) -> u64 {
        self.inner.boost.budget
    }

    #[setter]
    fn set_budget(&mut self, v: u64) {
        self.inner.boost.budget = v;
    }

    /// Global cap on attack queries, or `None`.
    #[getter]
    fn get_max_queries(&self) -> Option<u64> {
        self.inner.run.max_queries
    }

    #[setter]
    fn set_max_queries(&mut self, v: Option<u64>) {
        self.inner.run.max_queries = v;
    }

    #[getter]
    fn get_oracle_spec(&self) -> String {
        self.inner.oracle.spec.clone()
    }

    #[setter]
    fn set_oracle_spec(&mut self, v: String) {
        self.inner.oracle.spec = v;
    }

    /// The oracle named by the `[oracle]` section.
    fn oracle(&self) -> PyResult<PyOracle> {
        self.inner.oracle(&self.base).map(PyOracle).map_err(to_py)
    }

    fn transforms(&self) -> PyResult<PyTransforms> {
        self.inner.transforms.resolve().map(PyTransforms).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(seed={}, hash={})", self.inner.run.seed, &self.inner.hash()[..12])
    }
}

/// The synthetic desk scene: victim and target renders, object region and
/// the template classifier as an `Oracle`.
#[pyfunction]
fn desk_scenario<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
    let s = DeskFixture::default().scenario().map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("victim", PyImage(s.victim))?;
    d.set_item("target_example", PyImage(s.target_example))?;
    d.set_item("object", PyGrid(s.object))?;
    d.set_item("victim_label", s.victim_label.0)?;
    d.set_item("target_label", s.target_label.0)?;
    d.set_item("oracle", PyOracle(Arc::new(s.classifier)))?;
    Ok(d)
}

/// Fraction of `n` sampled transforms of `scene` (with `delta` applied
/// inside `mask`, when given) that `oracle` labels `target`.
#[pyfunction]
#[pyo3(signature = (scene, object, target, oracle, transforms, n, seed, mask=None, delta=None))]
#[allow(clippy::too_many_arguments)]
fn estimate_survivability<'py>(
    py: Python<'py>,
    scene: &PyImage,
    object: &PyGrid,
    target: i64,
    oracle: &Bound<'py, PyAny>,
    transforms: &PyTransforms,
    n: usize,
    seed: u64,
    mask: Option<&PyGrid>,
    delta: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let oracle = resolve_oracle(Some(oracle), &PyRunConfig::new())?;
    let est = SurvivabilityEstimator::new(scene.0.clone(), object.0.clone(), Label(target), transforms.0.clone()).map_err(to_py)?;
    let c = scene.0.channels();
    let mask = match mask {
        Some(m) => Mask::clipped(&m.0, object.0.clone()).map_err(to_py)?,
        None => Mask::empty(object.0.clone()),
    };
    let delta = match delta {
        Some(d) => Perturbation::new(mask.width(), mask.height(), c, d).map_err(to_py)?,
        None => Perturbation::zeros(mask.width(), mask.height(), c),
    };
    let session = OracleSession::new(oracle, Arc::new(QueryLedger::new(None)));
    let r = py.detach(|| est.estimate(&mask, &delta, n, seed, &session, Phase::Direct)).map_err(to_py)?;
    json_to_py(py, &r)
}

/// Runs the attack described by `config`, optionally against a Python
/// oracle, and returns the report as a dict. With `out_dir` the run
/// directory (report, images, trace) is written as the CLI does.
#[pyfunction]
#[pyo3(signature = (config, oracle=None, out_dir=None, iterative=false))]
fn run_attack<'py>(
    py: Python<'py>,
    config: &PyRunConfig,
    oracle: Option<&Bound<'py, PyAny>>,
    out_dir: Option<PathBuf>,
    iterative: bool,
) -> PyResult<Bound<'py, PyAny>> {
    config.inner.validate().map_err(to_py)?;
    let oracle = resolve_oracle(oracle, config)?;
    let inst = config.inner.instance(&config.base).map_err(to_py)?;
    let hooks = RunHooks { base_dir: config.base.clone(), ..Default::default() };
    let cfg = &config.inner;
    let arts = py
        .detach(|| {
            if iterative {
                pipeline::run_iterative(&inst, cfg, oracle, &hooks)
            } else {
                pipeline::run_attack(&inst, cfg, oracle, &hooks)
            }
        })
        .map_err(to_py)?;
    if let Some(dir) = out_dir {
        arts.write(&dir).map_err(to_py)?;
    }
    json_to_py(py, &arts.report)
}

/// Sampling-error bound as commonly printed, `2 exp(-n q^3 / (3 eps^2))`.
#[pyfunction]
fn chernoff_bound(n: usize, q: f64, eps: f64) -> PyResult<f64> {
    physadv::survivability::chernoff_bound(n, q, eps).map_err(to_py)
}

/// The multiplicative Chernoff bound, `2 exp(-n eps^2 / (3 q))`.
#[pyfunction]
fn chernoff_bound_derived(n: usize, q: f64, eps: f64) -> PyResult<f64> {
    physadv::survivability::chernoff_bound_derived(n, q, eps).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "physadv")]
fn physadv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("PhysadvError", py.get_type::<PhysadvError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("OracleError", py.get_type::<OracleError>())?;
    m.add("BudgetExceededError", py.get_type::<BudgetExceededError>())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyTransforms>()?;
    m.add_class::<PyOracle>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_function(wrap_pyfunction!(desk_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_survivability, m)?)?;
    m.add_function(wrap_pyfunction!(run_attack, m)?)?;
    m.add_function(wrap_pyfunction!(chernoff_bound, m)?)?;
    m.add_function(wrap_pyfunction!(chernoff_bound_derived, m)?)?;
    Ok(())
}
