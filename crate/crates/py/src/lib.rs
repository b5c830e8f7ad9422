//! Python bindings: set calculus, disturbance prediction, the stability
//! certificate and whole scenario runs.
//!
//! Vectors cross the boundary as lists of floats and matrices as lists of
//! rows; structured results come back as JSON strings.

use std::path::PathBuf;

use frs_core::config::ScenarioConfig;
use frs_core::disturbance::{self, DisturbanceModel, DisturbancePrediction};
use frs_core::ellipsoid;
use frs_core::export::{export, metrics_json};
use frs_core::multirotor::Vec3;
use frs_core::scenario::{self, RunArtifacts};
use frs_core::FrsError;
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: FrsError) -> PyErr {
    match e {
        FrsError::InvalidParameter(_) | FrsError::DimensionMismatch { .. } | FrsError::ZeroDirection => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vec3(v: &[f64], name: &str) -> PyResult<Vec3> {
    if v.len() != 3 {
        return Err(PyValueError::new_err(format!("{name} must have 3 entries")));
    }
    Ok(Vec3::from_column_slice(v))
}

fn model(bound: &[f64], rate_bound: &[f64]) -> PyResult<DisturbanceModel> {
    DisturbanceModel::new(vec3(bound, "bound")?, vec3(rate_bound, "rate_bound")?).map_err(to_py)
}

fn config(json: Option<&str>) -> PyResult<ScenarioConfig> {
    match json {
        Some(text) => ScenarioConfig::from_json(text).map_err(to_py),
        None => Ok(ScenarioConfig::default()),
    }
}

/// `{x : (x - c)ᵀ K (x - c) <= 1}` with positive definite `K`.
#[pyclass(name = "Ellipsoid", module = "adaptive_frs", frozen)]
struct PyEllipsoid(ellipsoid::Ellipsoid);

#[pymethods]
impl PyEllipsoid {
    #[new]
    fn new(center: Vec<f64>, shape: Vec<Vec<f64>>) -> PyResult<Self> {
        ellipsoid::Ellipsoid::new(DVector::from_vec(center), matrix(&shape)?)
            .map(Self)
            .map_err(to_py)
    }

    #[staticmethod]
    fn from_inverse_shape(center: Vec<f64>, inverse_shape: Vec<Vec<f64>>) -> PyResult<Self> {
        ellipsoid::Ellipsoid::from_inverse_shape(DVector::from_vec(center), &matrix(&inverse_shape)?)
            .map(Self)
            .map_err(to_py)
    }

    #[staticmethod]
    fn ball(center: Vec<f64>, radius: f64) -> PyResult<Self> {
        ellipsoid::Ellipsoid::ball(DVector::from_vec(center), radius)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn center(&self) -> Vec<f64> {
        self.0.center().iter().copied().collect()
    }

    #[getter]
    fn shape(&self) -> Vec<Vec<f64>> {
        rows(self.0.shape())
    }

    fn inverse_shape(&self) -> PyResult<Vec<Vec<f64>>> {
        self.0.inverse_shape().map(|q| rows(&q)).map_err(to_py)
    }

    fn quadratic_form(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.quadratic_form(&DVector::from_vec(x)).map_err(to_py)
    }

    #[pyo3(signature = (x, slack = 0.0))]
    fn contains(&self, x: Vec<f64>, slack: f64) -> PyResult<bool> {
        self.0.contains(&DVector::from_vec(x), slack).map_err(to_py)
    }

    fn support(&self, direction: Vec<f64>) -> PyResult<f64> {
        self.0.support(&DVector::from_vec(direction)).map_err(to_py)
    }

    fn project(&self, kept: Vec<usize>) -> PyResult<Self> {
        self.0.project(&kept).map(Self).map_err(to_py)
    }

    fn linear_map(&self, t: Vec<Vec<f64>>) -> PyResult<Self> {
        self.0.linear_map(&matrix(&t)?).map(Self).map_err(to_py)
    }

    fn trace_inverse(&self) -> PyResult<f64> {
        self.0.trace_inverse().map_err(to_py)
    }

    fn log_det_inverse(&self) -> PyResult<f64> {
        self.0.log_det_inverse().map_err(to_py)
    }

    fn axis_extents(&self) -> PyResult<Vec<f64>> {
        self.0.axis_extents().map(|v| v.iter().copied().collect()).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Ellipsoid(dim={}, center={:?})", self.0.dim(), self.center())
    }
}

/// Minimal-trace outer bound of a Minkowski sum; takes and returns inverse shapes.
#[pyfunction]
fn min_trace_sum(inverse_shapes: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
    let ms = inverse_shapes.iter().map(|m| matrix(m)).collect::<PyResult<Vec<_>>>()?;
    ellipsoid::min_trace_sum(&ms).map(|q| rows(&q)).map_err(to_py)
}

#[pyfunction]
fn fuse_intersection(e1: &PyEllipsoid, e2: &PyEllipsoid, b: f64) -> PyResult<PyEllipsoid> {
    ellipsoid::fuse_intersection(&e1.0, &e2.0, b)
        .map(PyEllipsoid)
        .map_err(to_py)
}

/// Diagonal shape of the minimal-trace ellipsoid through the box corners.
#[pyfunction]
fn min_trace_box_ellipsoid(half_widths: Vec<f64>) -> PyResult<Vec<f64>> {
    let l = ellipsoid::min_trace_box_ellipsoid(&vec3(&half_widths, "half_widths")?).map_err(to_py)?;
    Ok((0..3).map(|i| l[(i, i)]).collect())
}

#[pyfunction]
fn error_radius(bound: Vec<f64>, rate_bound: Vec<f64>, alpha_d: f64, theta1: f64, t: f64) -> PyResult<f64> {
    disturbance::error_radius(&model(&bound, &rate_bound)?, alpha_d, theta1, t).map_err(to_py)
}

/// `(center, half_width)` of the disturbance box predicted at `tau` from an
/// estimate taken at `t0`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn predict_bounds(
    bound: Vec<f64>,
    rate_bound: Vec<f64>,
    alpha_d: f64,
    theta1: f64,
    t0: f64,
    d_hat: Vec<f64>,
    tau: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let p = DisturbancePrediction::from_observation(model(&bound, &rate_bound)?, alpha_d, theta1, t0, vec3(&d_hat, "d_hat")?)
        .map_err(to_py)?;
    let (c, h) = p.predict_bounds(tau).map_err(to_py)?;
    Ok((c.iter().copied().collect(), h.iter().copied().collect()))
}

#[pyfunction]
fn default_config() -> String {
    ScenarioConfig::default().to_json()
}

/// Stability certificate plus observer and error-dynamics audits, as JSON.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn check_gains(py: Python<'_>, config_json: Option<&str>) -> PyResult<String> {
    let cfg = config(config_json)?;
    let report = py.detach(|| scenario::stability_report(&cfg)).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn finish(a: RunArtifacts, out_dir: Option<PathBuf>) -> PyResult<String> {
    if let Some(dir) = out_dir {
        export(&a, &dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
    }
    Ok(metrics_json(&a).to_string())
}

/// Runs scenario 1 and returns its metrics as JSON; writes all artifacts
/// when `out_dir` is given.
#[pyfunction]
#[pyo3(signature = (config_json = None, out_dir = None))]
fn run_scenario1(py: Python<'_>, config_json: Option<&str>, out_dir: Option<PathBuf>) -> PyResult<String> {
    let cfg = config(config_json)?;
    let a = py.detach(|| scenario::run_scenario1(&cfg)).map_err(to_py)?;
    finish(a, out_dir)
}

#[pyfunction]
#[pyo3(signature = (config_json = None, out_dir = None))]
fn run_scenario2(py: Python<'_>, config_json: Option<&str>, out_dir: Option<PathBuf>) -> PyResult<String> {
    let cfg = config(config_json)?;
    let a = py.detach(|| scenario::run_scenario2(&cfg)).map_err(to_py)?;
    finish(a, out_dir)
}

#[pymodule]
fn adaptive_frs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEllipsoid>()?;
    m.add_function(wrap_pyfunction!(min_trace_sum, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_intersection, m)?)?;
    m.add_function(wrap_pyfunction!(min_trace_box_ellipsoid, m)?)?;
    m.add_function(wrap_pyfunction!(error_radius, m)?)?;
    m.add_function(wrap_pyfunction!(predict_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(check_gains, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario1, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario2, m)?)?;
    Ok(())
}
