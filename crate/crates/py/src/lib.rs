//! Python bindings: scenes, solving, the refractor envelope and tracing.

use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

use refractor_core::analysis::holder_alpha as core_alpha;
use refractor_core::cli::pipeline_json;
use refractor_core::geometry::{refract_dir, OpticalConstants};
use refractor_core::raytrace::{energy_histogram, trace_ray, TraceMode};
use refractor_core::refractor::{envelope_eval, refractor_measure, surface_csv, RefractorEnvelope};
use refractor_core::scene::{validate_scene, Scene as CoreScene, SceneConfig};
use refractor_core::solver::{select_parameters, solve_discrete, ParameterPipeline, SolveOptions};
use refractor_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::NonConvergence { .. } | Error::SearchOverflow { .. } | Error::Invariant(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Converts through JSON so results arrive as plain dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Refracted unit direction and `Q` for the slope `v`.
#[pyfunction]
fn refract(v: Vec<f64>, kappa: f64) -> PyResult<(Vec<f64>, f64)> {
    let k = OpticalConstants::from_kappa(kappa).map_err(py_err)?;
    let r = refract_dir(&v, &k).map_err(py_err)?;
    Ok((r.lambda, r.q))
}

/// Parameter chain for `tau1`, or for the smallest admissible `tau1` when omitted.
#[pyfunction]
#[pyo3(signature = (kappa, delta, width, tau1=None))]
fn params<'py>(py: Python<'py>, kappa: f64, delta: f64, width: f64, tau1: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
    let p = match tau1 {
        Some(t) => ParameterPipeline::evaluate(kappa, delta, width, t),
        None => select_parameters(kappa, delta, width),
    }
    .map_err(py_err)?;
    to_py(py, &pipeline_json(&p))
}

#[pyfunction]
fn holder_alpha(n: usize, q: f64) -> PyResult<f64> {
    core_alpha(n, q).map_err(py_err)
}

#[pyclass(frozen)]
struct Scene {
    inner: Arc<CoreScene>,
}

#[pymethods]
impl Scene {
    #[new]
    fn new(config_json: &str) -> PyResult<Self> {
        let cfg = SceneConfig::from_json(config_json).map_err(py_err)?;
        Ok(Self { inner: Arc::new(CoreScene::new(cfg).map_err(py_err)?) })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::new(&text)
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.inner.constants.kappa
    }

    #[getter]
    fn total_energy(&self) -> f64 {
        self.inner.total_energy
    }

    #[getter]
    fn n_targets(&self) -> usize {
        self.inner.targets().len()
    }

    #[getter]
    fn cells(&self) -> usize {
        self.inner.grid.len()
    }

    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &validate_scene(&self.inner))
    }

    /// Solves for the focal parameters; releases the GIL while iterating.
    fn solve(&self, py: Python<'_>) -> PyResult<Solution> {
        let scene = self.inner.clone();
        let r = py
            .detach(move || solve_discrete(&scene, SolveOptions::for_scene(&scene)))
            .map_err(py_err)?;
        Ok(Solution { b: r.b, residual: r.residual, iterations: r.iterations, measure: r.measure })
    }

    fn refractor(&self, b: Vec<f64>) -> PyResult<Refractor> {
        Ok(Refractor { inner: RefractorEnvelope::new(self.inner.clone(), b).map_err(py_err)? })
    }
}

#[pyclass(frozen, get_all)]
struct Solution {
    b: Vec<f64>,
    residual: f64,
    iterations: usize,
    measure: Vec<f64>,
}

#[pymethods]
impl Solution {
    fn __repr__(&self) -> String {
        format!("Solution(b={:?}, residual={:e}, iterations={})", self.b, self.residual, self.iterations)
    }
}

/// Envelope of the lower sheets for a given focal parameter vector.
#[pyclass(frozen)]
struct Refractor {
    inner: RefractorEnvelope,
}

#[pymethods]
impl Refractor {
    #[getter]
    fn b(&self) -> Vec<f64> {
        self.inner.b.clone()
    }

    /// Height at `x` and the targets whose sheets attain it.
    fn eval(&self, x: Vec<f64>) -> PyResult<(f64, Vec<usize>)> {
        envelope_eval(&x, &self.inner).map_err(py_err)
    }

    fn measure(&self) -> Vec<f64> {
        refractor_measure(&self.inner).values
    }

    fn trace<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &trace_ray(&x, &self.inner).map_err(py_err)?)
    }

    /// Per-target energy; Monte Carlo when `rays` is given.
    #[pyo3(signature = (rays=None, seed=0))]
    fn histogram<'py>(&self, py: Python<'py>, rays: Option<usize>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let mode = match rays {
            Some(rays) => TraceMode::MonteCarlo { rays, seed },
            None => TraceMode::Cell,
        };
        to_py(py, &energy_histogram(&self.inner, mode).map_err(py_err)?)
    }

    fn surface_csv(&self) -> String {
        surface_csv(&self.inner)
    }
}

#[pymodule]
fn parallel_refractor(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(refract, m)?)?;
    m.add_function(wrap_pyfunction!(params, m)?)?;
    m.add_function(wrap_pyfunction!(holder_alpha, m)?)?;
    m.add_class::<Scene>()?;
    m.add_class::<Solution>()?;
    m.add_class::<Refractor>()?;
    Ok(())
}
