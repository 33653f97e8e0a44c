//! Python bindings. Windows cross the boundary as lists of per-channel lists.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mwcore::metrics::{metrics as rates, ConfusionCounts};
use mwcore::model::{self as m, ArchSpec, ModelParams};
use mwcore::preprocess::{self as pp, Label};
use mwcore::synthetic::{burst_dataset, BurstConfig};
use mwcore::train::{run_cv_with_folds, TrainConfig};
use mwcore::{Error, Tensor};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn window_tensor(rows: Vec<Vec<f32>>) -> PyResult<Tensor<f32>> {
    let c = rows.len();
    let t = rows.first().map_or(0, Vec::len);
    if c == 0 || t == 0 || rows.iter().any(|r| r.len() != t) {
        return Err(PyValueError::new_err("window must be a non-empty list of equal-length channel lists"));
    }
    Tensor::new(vec![c, t], rows.concat()).map_err(to_py)
}

fn window_rows(t: &Tensor<f32>) -> Vec<Vec<f32>> {
    t.data().chunks_exact(t.shape()[1]).map(<[f32]>::to_vec).collect()
}

/// Network layout; weights are only compatible with the layout they were saved for.
#[pyclass(name = "Arch", module = "mwcnn", frozen)]
struct PyArch(ArchSpec);

#[pymethods]
impl PyArch {
    /// Layout for a 2, 5 or 8 s window.
    #[new]
    #[pyo3(signature = (window_seconds, sampling_rate, n_channels, n_maps = 20, dropout = 0.2))]
    fn new(window_seconds: u32, sampling_rate: f64, n_channels: usize, n_maps: usize, dropout: f64) -> PyResult<Self> {
        m::build_arch(window_seconds, sampling_rate, n_channels, n_maps)
            .and_then(|a| a.with_dropout(dropout))
            .map(PyArch)
            .map_err(to_py)
    }

    /// Explicit input length and pooling `(kernel, stride)` pairs.
    #[staticmethod]
    #[pyo3(signature = (n_channels, n_timesteps, pools, n_maps = 20, dropout = 0.2))]
    fn custom(n_channels: usize, n_timesteps: usize, pools: [(usize, usize); 4], n_maps: usize, dropout: f64) -> PyResult<Self> {
        m::build_arch_with_pooling(n_channels, n_timesteps, n_maps, pools, dropout)
            .map(PyArch)
            .map_err(to_py)
    }

    #[getter]
    fn n_channels(&self) -> usize {
        self.0.input.n_channels
    }

    #[getter]
    fn n_timesteps(&self) -> usize {
        self.0.input.n_timesteps
    }

    fn fingerprint(&self) -> String {
        m::arch::hex(&self.0.fingerprint())
    }

    /// `(layer kind, output dims)` for every layer.
    fn shape_trace(&self) -> PyResult<Vec<(String, Vec<usize>)>> {
        let trace = m::shape_trace(&self.0).map_err(to_py)?;
        Ok(trace.iter().map(|e| (e.layer.kind().to_string(), e.shape.dims())).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Arch(channels={}, timesteps={}, maps={})",
            self.0.input.n_channels, self.0.input.n_timesteps, self.0.input.n_maps
        )
    }
}

#[pyclass(name = "Model", module = "mwcnn")]
struct PyModel(ModelParams<f32>);

#[pymethods]
impl PyModel {
    /// Glorot-initialized weights.
    #[new]
    #[pyo3(signature = (arch, seed = 0))]
    fn new(arch: &PyArch, seed: u64) -> PyResult<Self> {
        m::init_params(&arch.0, seed).map(PyModel).map_err(to_py)
    }

    #[staticmethod]
    fn zeros(arch: &PyArch) -> PyResult<Self> {
        ModelParams::zeros(&arch.0).map(PyModel).map_err(to_py)
    }

    /// Fails with ValueError when the file was saved for another layout.
    #[staticmethod]
    fn load(path: std::path::PathBuf, arch: &PyArch) -> PyResult<Self> {
        m::load_params(path, &arch.0).map(PyModel).map_err(to_py)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        m::save_params(&self.0, path).map_err(to_py)
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.0.n_params()
    }

    /// Returns `(label, p_label)` with label "MW" or "FS".
    fn predict(&self, window: Vec<Vec<f32>>) -> PyResult<(&'static str, f32)> {
        let (label, probs) = m::predict(&self.0, &window_tensor(window)?).map_err(to_py)?;
        Ok((label.name(), probs[label.index()]))
    }

    /// `[p_fs, p_mw]`
    fn probabilities(&self, window: Vec<Vec<f32>>) -> PyResult<Vec<f32>> {
        m::predict(&self.0, &window_tensor(window)?).map(|(_, p)| p).map_err(to_py)
    }
}

#[pyclass(name = "Dataset", module = "mwcnn")]
struct PyDataset(pp::Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        pp::load_dataset(path).map(PyDataset).map_err(to_py)
    }

    /// Balanced noise-vs-burst windows for experiments without recordings.
    #[staticmethod]
    #[pyo3(signature = (n_samples = 200, n_channels = 8, n_timesteps = 256, seed = 0, amplitude = 3.0))]
    fn synthetic(n_samples: usize, n_channels: usize, n_timesteps: usize, seed: u64, amplitude: f64) -> PyResult<Self> {
        let cfg = BurstConfig {
            n_samples,
            n_channels,
            n_timesteps,
            amplitude,
            ..BurstConfig::default()
        };
        burst_dataset(&cfg, seed).map(PyDataset).map_err(to_py)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        pp::save_dataset(&self.0, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn sampling_rate(&self) -> f64 {
        self.0.sampling_rate
    }

    #[getter]
    fn n_channels(&self) -> usize {
        self.0.n_channels
    }

    #[getter]
    fn n_timesteps(&self) -> usize {
        self.0.n_timesteps
    }

    /// `(fs, mw)`
    fn class_counts(&self) -> (usize, usize) {
        self.0.class_counts()
    }

    fn window(&self, i: usize) -> PyResult<Vec<Vec<f32>>> {
        self.sample(i).map(|s| window_rows(&s.data))
    }

    fn label(&self, i: usize) -> PyResult<&'static str> {
        self.sample(i).map(|s| s.label.name())
    }
}

impl PyDataset {
    fn sample(&self, i: usize) -> PyResult<&pp::WindowSample> {
        self.0
            .samples
            .get(i)
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(format!("index {i} out of range")))
    }
}

fn metrics_dict<'py>(py: Python<'py>, c: &ConfusionCounts) -> PyResult<Bound<'py, PyDict>> {
    let r = rates(c).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("tp", c.tp)?;
    d.set_item("tn", c.tn)?;
    d.set_item("fp", c.fp)?;
    d.set_item("fn", c.fn_)?;
    d.set_item("accuracy", r.accuracy)?;
    d.set_item("sensitivity", r.sensitivity)?;
    d.set_item("specificity", r.specificity)?;
    d.set_item("precision", r.precision)?;
    d.set_item("npv", r.npv)?;
    Ok(d)
}

/// Rates from confusion counts; undefined rates are None.
#[pyfunction]
#[pyo3(name = "metrics")]
fn py_metrics<'py>(py: Python<'py>, tp: u64, tn: u64, fp: u64, fn_: u64) -> PyResult<Bound<'py, PyDict>> {
    metrics_dict(py, &ConfusionCounts::new(tp, tn, fp, fn_))
}

/// k-fold cross-validation. Returns the pooled metrics plus per-repetition
/// counts under "repetitions"; the GIL is released while training.
#[pyfunction]
#[pyo3(signature = (dataset, arch, epochs = 100, batch_size = 16, learning_rate = 1e-3, seed = 0, folds = 10))]
#[allow(clippy::too_many_arguments)]
fn run_cv<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    arch: &PyArch,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
    folds: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let dropout = arch
        .0
        .layers
        .iter()
        .find_map(|l| match l {
            m::LayerSpec::Dropout { rate } => Some(*rate),
            _ => None,
        })
        .unwrap_or(0.0);
    let cfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        dropout_rate: dropout,
        seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(to_py)?;
    let (ds, a) = (&dataset.0, &arch.0);
    let out = py.detach(|| run_cv_with_folds(ds, a, &cfg, folds)).map_err(to_py)?;
    let d = metrics_dict(py, &out.pooled)?;
    let reps: Vec<(u64, u64, u64, u64)> = out
        .repetitions
        .iter()
        .map(|r| (r.counts.tp, r.counts.tn, r.counts.fp, r.counts.fn_))
        .collect();
    d.set_item("repetitions", reps)?;
    Ok(d)
}

/// Built-in self checks as `(name, passed, detail)` tuples.
#[pyfunction]
fn verify() -> Vec<(String, bool, String)> {
    mwcore::verify::run_checks(&Default::default())
        .into_iter()
        .map(|r| (r.name, r.passed, r.detail))
        .collect()
}

/// Per-channel z-score of one window.
#[pyfunction]
fn zscore(window: Vec<Vec<f32>>) -> PyResult<Vec<Vec<f32>>> {
    Ok(window_rows(&pp::zscore(&window_tensor(window)?)))
}

#[pymodule]
fn mwcnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArch>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(py_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(run_cv, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(zscore, m)?)?;
    m.add("MW", Label::Mw.name())?;
    m.add("FS", Label::Fs.name())?;
    Ok(())
}
