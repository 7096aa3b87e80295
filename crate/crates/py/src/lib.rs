//! Python bindings: snapshots, ESDs, Hill fits, schedules and the
//! synthetic-spectrum check.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tempbal_core::config::parse_policy;
use tempbal_core::esd::{compute_esd, Esd, OrientedMatrix};
use tempbal_core::htsr::{self, POWER_ITER_MAX, POWER_ITER_TOL};
use tempbal_core::scheduler::{self, LayerValues};
use tempbal_core::weight_store::{LayerTensor, WeightSnapshot};
use tempbal_core::{LambdaMinPolicy, LayerMetrics};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn policy_of(name: &str, bins: usize) -> PyResult<LambdaMinPolicy> {
    parse_policy(name, bins).ok_or_else(|| PyValueError::new_err(format!("unknown policy {name:?}")))
}

fn matrix(values: Vec<f64>, rows: usize, cols: usize) -> PyResult<OrientedMatrix> {
    OrientedMatrix::from_row_major("input", rows, cols, values).map_err(value_err)
}

fn metrics_dict<'py>(py: Python<'py>, m: &LayerMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("alpha_hill", m.alpha_hill)?;
    d.set_item("k", m.k)?;
    d.set_item("lambda_min", m.lambda_min)?;
    d.set_item("spectral_norm", m.spectral_norm)?;
    d.set_item("alpha_weighted", m.alpha_weighted)?;
    d.set_item("n", m.n)?;
    d.set_item("m", m.m)?;
    Ok(d)
}

/// A named weight tensor; `dims` is `[out, in]` or `[out, in, kh, kw]`.
#[pyclass(name = "LayerTensor", from_py_object)]
#[derive(Clone)]
struct PyLayer {
    inner: LayerTensor,
}

#[pymethods]
impl PyLayer {
    #[new]
    fn new(name: String, dims: Vec<usize>, values: Vec<f64>) -> PyResult<Self> {
        LayerTensor::new(name, dims, values)
            .map(|inner| PyLayer { inner })
            .map_err(value_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims.clone()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    fn __repr__(&self) -> String {
        format!("LayerTensor({:?}, dims={:?})", self.inner.name, self.inner.dims)
    }
}

#[pyclass(name = "Snapshot")]
struct PySnapshot {
    inner: WeightSnapshot,
}

#[pymethods]
impl PySnapshot {
    #[new]
    fn new(epoch: u32, layers: Vec<PyLayer>) -> PyResult<Self> {
        WeightSnapshot::new(epoch, layers.into_iter().map(|l| l.inner).collect())
            .map(|inner| PySnapshot { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        tempbal_core::read_snapshot(BufReader::new(file))
            .map(|inner| PySnapshot { inner })
            .map_err(value_err)
    }

    fn write(&self, path: &str) -> PyResult<u64> {
        let file = File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let mut w = BufWriter::new(file);
        let n = tempbal_core::write_snapshot(&self.inner, &mut w).map_err(value_err)?;
        w.flush().map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(n)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        WeightSnapshot::from_bytes(data)
            .map(|inner| PySnapshot { inner })
            .map_err(value_err)
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        self.inner.to_bytes().map_err(value_err)
    }

    #[getter]
    fn epoch(&self) -> u32 {
        self.inner.epoch
    }

    #[getter]
    fn layers(&self) -> Vec<PyLayer> {
        self.inner
            .layers
            .iter()
            .map(|l| PyLayer { inner: l.clone() })
            .collect()
    }

    /// Per-layer metrics dicts; failed layers carry an `error` key instead.
    #[pyo3(signature = (policy="median", bins=100))]
    fn analyze<'py>(&self, py: Python<'py>, policy: &str, bins: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let policy = policy_of(policy, bins)?;
        let results = py.detach(|| scheduler::analyze_snapshot(&self.inner, policy));
        results
            .into_iter()
            .map(|(name, r)| {
                let d = match r {
                    Ok(m) => metrics_dict(py, &m)?,
                    Err(e) => {
                        let d = PyDict::new(py);
                        d.set_item("error", e.to_string())?;
                        d
                    }
                };
                d.set_item("layer", name)?;
                Ok(d)
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.layers.len()
    }
}

/// Ascending eigenvalues of `WᵀW` for a row-major `rows × cols` matrix.
#[pyfunction]
fn esd(values: Vec<f64>, rows: usize, cols: usize) -> PyResult<Vec<f64>> {
    let mat = matrix(values, rows, cols)?;
    compute_esd(&mat)
        .map(|e| e.eigenvalues().to_vec())
        .map_err(value_err)
}

#[pyfunction]
fn hill_alpha(eigenvalues: Vec<f64>, k: usize) -> PyResult<f64> {
    let esd = Esd::from_eigenvalues("input", eigenvalues, 0).map_err(value_err)?;
    htsr::hill_alpha(&esd, k).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (eigenvalues, policy="median", bins=100))]
fn layer_metrics<'py>(
    py: Python<'py>,
    eigenvalues: Vec<f64>,
    policy: &str,
    bins: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let esd = Esd::from_eigenvalues("input", eigenvalues, 0).map_err(value_err)?;
    let m = htsr::layer_metrics(&esd, policy_of(policy, bins)?).map_err(value_err)?;
    metrics_dict(py, &m)
}

/// Top singular value and iteration count.
#[pyfunction]
#[pyo3(signature = (values, rows, cols, tol=POWER_ITER_TOL, max_iter=POWER_ITER_MAX))]
fn power_iteration(values: Vec<f64>, rows: usize, cols: usize, tol: f64, max_iter: usize) -> PyResult<(f64, usize)> {
    let mat = matrix(values, rows, cols)?;
    htsr::power_iteration_sigma(&mat, tol, max_iter)
        .map(|t| (t.sigma, t.iterations))
        .map_err(value_err)
}

#[pyfunction]
fn cal_rate(eta0: f64, t: usize, total: usize) -> PyResult<f64> {
    scheduler::cal_rate(eta0, t, total).map_err(value_err)
}

/// Per-layer rates from a `{layer: alpha}` dict, in insertion order.
#[pyfunction]
#[pyo3(signature = (eta_t, alphas, s1=0.5, s2=1.5))]
fn assign_tempbalance(eta_t: f64, alphas: Vec<(String, f64)>, s1: f64, s2: f64) -> PyResult<Vec<(String, f64)>> {
    let metrics: LayerValues = alphas.into_iter().collect();
    scheduler::assign_tempbalance(eta_t, &metrics, s1, s2)
        .map(|m| m.into_iter().collect())
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (q, s_grid, seed=0))]
fn verify_s_alpha<'py>(py: Python<'py>, q: usize, s_grid: Vec<f64>, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let rows = py
        .detach(|| tempbal_core::rmt_lab::verify_s_alpha(q, &s_grid, seed))
        .map_err(value_err)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("q", r.q)?;
            d.set_item("s", r.s)?;
            d.set_item("alpha_hill", r.alpha_hill)?;
            d.set_item("alpha_pred", r.alpha_pred)?;
            d.set_item("rel_err", r.rel_err)?;
            d.set_item("passes", r.passes())?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn tempbal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLayer>()?;
    m.add_class::<PySnapshot>()?;
    m.add_function(wrap_pyfunction!(esd, m)?)?;
    m.add_function(wrap_pyfunction!(hill_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(layer_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(power_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(cal_rate, m)?)?;
    m.add_function(wrap_pyfunction!(assign_tempbalance, m)?)?;
    m.add_function(wrap_pyfunction!(verify_s_alpha, m)?)?;
    Ok(())
}
