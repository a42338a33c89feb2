//! Python module `blindspot`.
//!
//! Structured results cross the boundary as JSON and come back as plain
//! dicts and lists, with the same field names as the HTTP API.

use std::collections::HashSet;

use blindspot_core::bundle::{load_bundle as core_load, validate_bundle, write_bundle};
use blindspot_core::session::WorkspaceRequest;
use blindspot_core::synthetic::{generate, PlantConfig};
use blindspot_core::{debias, synthetic, AnalysisConfig, DatasetBundle, Error, Session};
use ndarray::{Array2, ArrayView1};
use pyo3::exceptions::{PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NotFound { .. } => PyKeyError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_object<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_object<T: DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

/// A loaded or generated dataset bundle.
#[pyclass(module = "blindspot", name = "Bundle", frozen)]
pub struct PyBundle {
    inner: DatasetBundle,
}

#[pymethods]
impl PyBundle {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.inner.classes.clone()
    }

    #[getter]
    fn instance_ids(&self) -> Vec<String> {
        self.inner.instances.iter().map(|i| i.id.clone()).collect()
    }

    #[getter]
    fn segment_ids(&self) -> Vec<String> {
        self.inner.segments.iter().map(|s| s.id.clone()).collect()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels()
    }

    fn instances(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_object(py, &self.inner.instances)
    }

    fn segments(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_object(py, &self.inner.segments)
    }

    fn instance_matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.instance_matrix)
    }

    fn segment_matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.segment_matrix)
    }

    /// Violations as `"entity: message"` strings; empty when valid.
    fn validate(&self) -> Vec<String> {
        validate_bundle(&self.inner).into_iter().map(|v| format!("{}: {}", v.entity, v.message)).collect()
    }

    fn write(&self, path: &str) -> PyResult<()> {
        write_bundle(&self.inner, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.instances.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Bundle(instances={}, segments={}, dim={}, classes={:?})",
            self.inner.instances.len(),
            self.inner.segments.len(),
            self.inner.dim,
            self.inner.classes
        )
    }
}

/// An analysis session over one bundle; mirrors the HTTP routes.
#[pyclass(module = "blindspot", name = "Session", frozen)]
pub struct PySession {
    inner: Session,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (bundle, seed = 0))]
    fn new(py: Python<'_>, bundle: PyRef<'_, PyBundle>, seed: u64) -> PyResult<Self> {
        let data = bundle.inner.clone();
        let inner = py.detach(|| Session::new(data, AnalysisConfig::with_seed(seed))).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    fn overview(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_object(py, &self.inner.overview().map_err(to_py)?)
    }

    fn select_pair(&self, py: Python<'_>, negative: usize, positive: usize) -> PyResult<Py<PyAny>> {
        let view = py.detach(|| self.inner.select_pair(negative, positive)).map_err(to_py)?;
        to_object(py, &view)
    }

    fn pair_view(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_object(py, &self.inner.pair_view().map_err(to_py)?)
    }

    fn instances(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_object(py, &self.inner.instances().map_err(to_py)?)
    }

    #[pyo3(signature = (instance_id, k = None))]
    fn neighbors(&self, py: Python<'_>, instance_id: &str, k: Option<usize>) -> PyResult<Py<PyAny>> {
        to_object(py, &self.inner.neighbors(instance_id, k).map_err(to_py)?)
    }

    /// `request` takes the same keys as the workspace route body.
    #[pyo3(signature = (request = None))]
    fn segment_workspace(&self, py: Python<'_>, request: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let req: WorkspaceRequest = match request {
            Some(r) => from_object(py, r)?,
            None => WorkspaceRequest::default(),
        };
        to_object(py, &self.inner.segment_workspace(&req).map_err(to_py)?)
    }

    fn create_concept(&self, py: Python<'_>, name: &str, segment_ids: Vec<String>) -> PyResult<Py<PyAny>> {
        let info = py.detach(|| self.inner.create_concept(name, &segment_ids)).map_err(to_py)?;
        to_object(py, &info)
    }

    fn delete_concept(&self, concept_id: &str) -> PyResult<()> {
        self.inner.delete_concept(concept_id).map_err(to_py)
    }

    fn concepts(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_object(py, &self.inner.concepts())
    }

    fn concept_overview(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let rows = py.detach(|| self.inner.concept_overview()).map_err(to_py)?;
        to_object(py, &rows)
    }

    fn concept_detail(&self, py: Python<'_>, concept_id: &str) -> PyResult<Py<PyAny>> {
        let d = py.detach(|| self.inner.concept_detail(concept_id)).map_err(to_py)?;
        to_object(py, &d)
    }

    #[pyo3(signature = (concept_id, evaluate = false))]
    fn curve(&self, py: Python<'_>, concept_id: &str, evaluate: bool) -> PyResult<Py<PyAny>> {
        let c = py.detach(|| self.inner.curve(concept_id, evaluate)).map_err(to_py)?;
        to_object(py, &*c)
    }

    #[pyo3(signature = (concept_id, evaluate = false))]
    fn curve_csv(&self, py: Python<'_>, concept_id: &str, evaluate: bool) -> PyResult<String> {
        let c = py.detach(|| self.inner.curve(concept_id, evaluate)).map_err(to_py)?;
        c.to_csv_string().map_err(to_py)
    }

    #[pyo3(signature = (concept_id, t = 0.5))]
    fn recommend(&self, py: Python<'_>, concept_id: &str, t: f64) -> PyResult<Py<PyAny>> {
        let r = py.detach(|| self.inner.recommend(concept_id, t)).map_err(to_py)?;
        to_object(py, &r)
    }

    /// `control` is `"concept"` or `"random"`.
    #[pyo3(signature = (concept_id, n, control = "concept"))]
    fn evaluate(&self, py: Python<'_>, concept_id: &str, n: usize, control: &str) -> PyResult<Py<PyAny>> {
        let run = match control {
            "concept" => py.detach(|| self.inner.evaluate(concept_id, n).map(|r| (*r).clone())),
            "random" => py.detach(|| self.inner.evaluate_control(concept_id, n)),
            other => return Err(PyValueError::new_err(format!("unknown control {other:?}"))),
        }
        .map_err(to_py)?;
        to_object(py, &run)
    }

    fn apply_debias(&self, py: Python<'_>, concept_id: &str, n: usize) -> PyResult<Py<PyAny>> {
        let applied = py.detach(|| self.inner.apply_debias(concept_id, n)).map_err(to_py)?;
        to_object(py, &applied)
    }
}

#[pyfunction]
fn load_bundle(py: Python<'_>, path: &str) -> PyResult<PyBundle> {
    let inner = py.detach(|| core_load(path)).map_err(to_py)?;
    Ok(PyBundle { inner })
}

/// Generate a planted bundle; returns `(bundle, ground_truth)`.
///
/// `config` keys override the benchmark setting for `seed`.
#[pyfunction]
#[pyo3(signature = (seed = 0, config = None, out = None))]
fn synth(
    py: Python<'_>,
    seed: u64,
    config: Option<&Bound<'_, PyAny>>,
    out: Option<&str>,
) -> PyResult<(PyBundle, Py<PyAny>)> {
    let base = serde_json::to_value(PlantConfig::benchmark(seed)).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let mut merged = base;
    if let Some(c) = config {
        let patch: serde_json::Value = from_object(py, c)?;
        match (merged.as_object_mut(), patch) {
            (Some(m), serde_json::Value::Object(p)) => m.extend(p),
            _ => return Err(PyValueError::new_err("config must be a dict")),
        }
    }
    let cfg: PlantConfig = serde_json::from_value(merged).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (bundle, truth) = py.detach(|| generate(&cfg)).map_err(to_py)?;
    if let Some(dir) = out {
        write_bundle(&bundle, dir).map_err(to_py)?;
    }
    Ok((PyBundle { inner: bundle }, to_object(py, &truth)?))
}

/// Remove the component of `v` along `c`.
#[pyfunction]
fn debias_vector(v: Vec<f64>, c: Vec<f64>) -> PyResult<Vec<f64>> {
    debias::debias_vector(ArrayView1::from(&v), ArrayView1::from(&c)).map(|a| a.to_vec()).map_err(to_py)
}

#[pyfunction]
fn precision_at_k(ranking: Vec<String>, truth: Vec<String>, k: usize) -> PyResult<f64> {
    let truth: HashSet<String> = truth.into_iter().collect();
    synthetic::precision_at_k(&ranking, &truth, k).map_err(to_py)
}

#[pymodule]
fn blindspot(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBundle>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(load_bundle, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(debias_vector, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
