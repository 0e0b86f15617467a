//! Python bindings: layouts, weight matrices, Tikhonov imaging, link
//! statistics, Kalman tracking, metrics, the simulator and full experiments.
//! Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rti_core::experiment::{self as exp, ExperimentConfig, Method};
use rti_core::geometry::{self, NetworkLayout, NodeSpec, Point2, VoxelGrid};
use rti_core::imaging::{self, Regularizer};
use rti_core::linkstats;
use rti_core::scenarios;
use rti_core::selection::SelectionMethod;
use rti_core::simulator::{self, PropagationParams, Scenario, SimulationOutput};
use rti_core::tracking::{self, KalmanParams, RmseNormalization};
use rti_core::RtiError;

fn py_err(e: RtiError) -> PyErr {
    if e.is_config_error()
        || matches!(
            e,
            RtiError::InvalidArgument(_) | RtiError::InsufficientWindow { .. }
        )
    {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn points(v: &[(f64, f64)]) -> Vec<Point2> {
    v.iter().map(|&(x, y)| Point2::new(x, y)).collect()
}

fn tuples(v: &[Point2]) -> Vec<(f64, f64)> {
    v.iter().map(|p| (p.x, p.y)).collect()
}

#[pyclass(name = "Layout", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyLayout {
    inner: NetworkLayout,
}

#[pymethods]
impl PyLayout {
    /// `nodes` is a list of `(id, x, y, bearing_rad)`.
    #[new]
    fn new(nodes: Vec<(u32, f64, f64, f64)>) -> PyResult<Self> {
        let specs = nodes
            .into_iter()
            .map(|(id, x, y, b)| NodeSpec::new(id, Point2::new(x, y), b))
            .collect();
        NetworkLayout::new(specs)
            .map(|inner| PyLayout { inner })
            .map_err(py_err)
    }

    /// Ordered `(tx, rx)` pairs, tx-major.
    fn links(&self) -> Vec<(u32, u32)> {
        self.inner.links().iter().map(|l| (l.tx, l.rx)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.nodes().len()
    }
}

#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyGrid {
    inner: VoxelGrid,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(origin: (f64, f64), width: f64, height: f64, voxel_width: f64) -> PyResult<Self> {
        geometry::build_grid(Point2::new(origin.0, origin.1), width, height, voxel_width)
            .map(|inner| PyGrid { inner })
            .map_err(py_err)
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.height_voxels
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.width_voxels
    }

    fn centers(&self) -> Vec<(f64, f64)> {
        tuples(&self.inner.centers().collect::<Vec<_>>())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyfunction]
#[pyo3(signature = (grid, layout, lam = exp::DEFAULT_LAMBDA))]
fn weight_matrix(grid: &PyGrid, layout: &PyLayout, lam: f64) -> PyResult<Vec<Vec<f64>>> {
    let w = geometry::build_weight_matrix(&grid.inner, &layout.inner, lam).map_err(py_err)?;
    Ok(w.matrix
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect())
}

#[pyclass(name = "Reconstructor", frozen)]
pub struct PyReconstructor {
    inner: imaging::Reconstructor,
}

#[pymethods]
impl PyReconstructor {
    #[new]
    #[pyo3(signature = (weights, rows, cols, alpha = imaging::DEFAULT_ALPHA, regularizer = "identity"))]
    fn new(
        weights: Vec<Vec<f64>>,
        rows: usize,
        cols: usize,
        alpha: f64,
        regularizer: &str,
    ) -> PyResult<Self> {
        let m = weights.len();
        let n = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("weight rows have different lengths"));
        }
        let a = DMatrix::from_fn(m, n, |i, j| weights[i][j]);
        let reg: Regularizer = regularizer.parse().map_err(py_err)?;
        imaging::Reconstructor::build(&a, rows, cols, alpha, reg)
            .map(|inner| PyReconstructor { inner })
            .map_err(py_err)
    }

    /// Image for one vector of link statistics.
    fn reconstruct(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.reconstruct_values(&y).map_err(py_err)
    }
}

#[pyfunction]
fn mrti_stat(rssi: f64, baseline: f64) -> f64 {
    linkstats::mrti_stat(rssi, baseline)
}

#[pyfunction]
fn vrti_stat(window: Vec<f64>) -> PyResult<f64> {
    linkstats::vrti_stat(&window).map_err(py_err)
}

#[pyclass(name = "KalmanTracker")]
pub struct PyKalmanTracker {
    inner: tracking::KalmanTracker,
    time: u32,
}

#[pymethods]
impl PyKalmanTracker {
    #[new]
    #[pyo3(signature = (q = tracking::DEFAULT_Q, r = tracking::DEFAULT_R))]
    fn new(q: f64, r: f64) -> PyResult<Self> {
        let inner = tracking::KalmanTracker::new(KalmanParams { q, r }).map_err(py_err)?;
        Ok(PyKalmanTracker { inner, time: 0 })
    }

    /// Feeds one measurement, returns the filtered position.
    fn update(&mut self, x: f64, y: f64) -> PyResult<(f64, f64)> {
        let p = self
            .inner
            .update(Point2::new(x, y), self.time)
            .map_err(py_err)?;
        self.time += 1;
        Ok((p.x, p.y))
    }
}

#[pyfunction]
#[pyo3(signature = (measurements, q = tracking::DEFAULT_Q, r = tracking::DEFAULT_R))]
fn kalman_filter(measurements: Vec<(f64, f64)>, q: f64, r: f64) -> PyResult<Vec<(f64, f64)>> {
    tracking::KalmanTracker::filter(KalmanParams { q, r }, &points(&measurements))
        .map(|v| tuples(&v))
        .map_err(py_err)
}

fn normalization(name: &str) -> PyResult<RmseNormalization> {
    match name {
        "printed" => Ok(RmseNormalization::Printed),
        "sample_count" => Ok(RmseNormalization::SampleCount),
        other => Err(PyValueError::new_err(format!(
            "unknown normalization `{other}` (printed, sample_count)"
        ))),
    }
}

#[pyfunction]
#[pyo3(signature = (estimates, truth, t_c, t_d, normalization = "printed"))]
fn rmse(
    estimates: Vec<(f64, f64)>,
    truth: Vec<(f64, f64)>,
    t_c: usize,
    t_d: usize,
    normalization: &str,
) -> PyResult<f64> {
    let norm = self::normalization(normalization)?;
    tracking::rmse(&points(&estimates), &points(&truth), t_c, t_d, norm).map_err(py_err)
}

#[pyfunction]
fn error_cdf(errors: Vec<f64>, levels: Vec<f64>) -> PyResult<Vec<f64>> {
    tracking::error_cdf(&errors, &levels).map_err(py_err)
}

#[pyclass(name = "Scenario", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyScenario {
    scenario: Scenario,
    params: PropagationParams,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    #[pyo3(signature = (name, seed = 0))]
    fn builtin(name: &str, seed: u64) -> PyResult<Self> {
        let (scenario, params) = scenarios::builtin(name, seed).map_err(py_err)?;
        Ok(PyScenario { scenario, params })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (scenario, params) = simulator::load_scenario(&path).map_err(py_err)?;
        Ok(PyScenario { scenario, params })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.scenario.name
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.scenario.seed
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.scenario.mode.name()
    }

    fn layout(&self) -> PyLayout {
        PyLayout {
            inner: self.scenario.layout.clone(),
        }
    }

    fn grid(&self) -> PyGrid {
        PyGrid {
            inner: self.scenario.grid.clone(),
        }
    }

    /// Copy with another seed and, optionally, another measurement mode.
    #[pyo3(signature = (seed = None, mode = None, channels = None))]
    fn with_options(
        &self,
        seed: Option<u64>,
        mode: Option<&str>,
        channels: Option<Vec<u8>>,
    ) -> PyResult<Self> {
        let mut s = self.clone();
        if let Some(seed) = seed {
            s.scenario.seed = seed;
        }
        if let Some(m) = mode {
            s.scenario.mode = simulator::parse_mode(m, channels).map_err(py_err)?;
        }
        s.scenario.validate().map_err(py_err)?;
        Ok(s)
    }

    fn simulate(&self) -> PyResult<PySimulation> {
        let output = simulator::simulate(&self.scenario, &self.params).map_err(py_err)?;
        Ok(PySimulation {
            scenario: self.clone(),
            output,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        simulator::ScenarioFile::from_scenario(&self.scenario, &self.params)
            .to_toml()
            .map_err(py_err)
    }
}

#[pyclass(name = "Simulation", frozen)]
pub struct PySimulation {
    scenario: PyScenario,
    output: SimulationOutput,
}

#[pymethods]
impl PySimulation {
    #[getter]
    fn num_records(&self) -> usize {
        self.output.trace.records.len()
    }

    /// Ground-truth person positions, one per tick.
    fn truth(&self) -> Vec<(u32, f64, f64)> {
        self.output
            .truth
            .iter()
            .map(|t| (t.tick, t.position.x, t.position.y))
            .collect()
    }

    /// Writes the trace and ground truth as CSV into `dir`.
    fn write(&self, dir: PathBuf) -> PyResult<()> {
        exp::write_simulation(&self.output, &dir).map_err(py_err)
    }

    /// Runs the imaging and tracking pipeline on this trace. Returns the
    /// metrics as a dict.
    #[pyo3(signature = (method, selection = None, alpha = imaging::DEFAULT_ALPHA, regularizer = "identity"))]
    fn analyze<'py>(
        &self,
        py: Python<'py>,
        method: &str,
        selection: Option<&str>,
        alpha: f64,
        regularizer: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let method: Method = method.parse().map_err(py_err)?;
        let mut settings = exp::AnalysisSettings::new(method);
        if let Some(sel) = selection {
            settings = settings.with_selection(sel.parse::<SelectionMethod>().map_err(py_err)?);
        }
        let imaging_config = exp::ImagingConfig {
            alpha,
            regularizer: regularizer.parse().map_err(py_err)?,
            ..exp::ImagingConfig::default()
        };
        let sc = &self.scenario;
        let setup = exp::prepare_imaging(&sc.scenario, &imaging_config).map_err(py_err)?;
        let analysis = exp::analyze(&sc.scenario, &sc.params, &self.output, &setup, &settings)
            .map_err(py_err)?;
        let json = serde_json::to_string(&analysis.metrics)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        py.import("json")?.call_method1("loads", (json,))
    }
}

/// Runs the experiment in a TOML config file and returns its report as a dict.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let config = ExperimentConfig::load(&config).map_err(py_err)?;
    let report = exp::run_experiment(&config).map_err(py_err)?;
    py.import("json")?
        .call_method1("loads", (report.to_json().map_err(py_err)?,))
}

#[pymodule]
pub fn rti(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLayout>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyReconstructor>()?;
    m.add_class::<PyKalmanTracker>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(weight_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(mrti_stat, m)?)?;
    m.add_function(wrap_pyfunction!(vrti_stat, m)?)?;
    m.add_function(wrap_pyfunction!(kalman_filter, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(error_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
