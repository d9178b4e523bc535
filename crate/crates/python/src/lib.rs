//! Python bindings for the `feddm` core crate.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use feddm::config::RunConfig;
use feddm::diffusion::{self, DiffusionSchedule};
use feddm::embedding::{self, ModelKind, Norm};
use feddm::eval::{self, ReportRow};
use feddm::experiment;

fn py_err(e: feddm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = feddm::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// Experiment configuration, built from defaults or a `key = value` file.
#[pyclass(name = "RunConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: RunConfig::default(),
        }
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        RunConfig::from_file(&path)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    #[getter]
    fn run_dir(&self) -> PathBuf {
        self.inner.run_dir.clone()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(seed={}, run_dir={:?})",
            self.inner.seed(),
            self.inner.run_dir
        )
    }
}

/// One row of an evaluation report.
#[pyclass(name = "ReportRow", frozen, get_all)]
struct PyReportRow {
    arm: String,
    scope: String,
    split: String,
    model: String,
    mrr: f64,
    hits1: f64,
    hits3: f64,
    hits10: f64,
}

impl From<&ReportRow> for PyReportRow {
    fn from(r: &ReportRow) -> Self {
        Self {
            arm: r.arm.to_string(),
            scope: r.scope.to_string(),
            split: r.split.to_string(),
            model: r.model.to_string(),
            mrr: r.values[0],
            hits1: r.values[1],
            hits3: r.values[2],
            hits10: r.values[3],
        }
    }
}

#[pymethods]
impl PyReportRow {
    fn __repr__(&self) -> String {
        format!(
            "ReportRow({} {} {} {}: mrr={:.4} hits@1={:.4})",
            self.arm, self.scope, self.split, self.model, self.mrr, self.hits1
        )
    }
}

fn rows(mut rows: Vec<ReportRow>) -> Vec<PyReportRow> {
    eval::sort_rows(&mut rows);
    rows.iter().map(PyReportRow::from).collect()
}

/// Runs every configured arm for the config's seed. Returns the arms run.
#[pyfunction]
fn run(py: Python<'_>, config: &PyRunConfig) -> PyResult<Vec<String>> {
    let cfg = config.inner.clone();
    let snaps = py
        .detach(|| experiment::run_experiment(&cfg, None))
        .map_err(py_err)?;
    Ok(snaps.iter().map(|s| s.arm.to_string()).collect())
}

/// Evaluates the snapshots stored under `root` for `seed` and writes the
/// per-seed report. Rows come back in report order.
#[pyfunction]
fn evaluate(py: Python<'_>, root: PathBuf, seed: u64) -> PyResult<Vec<PyReportRow>> {
    py.detach(|| {
        experiment::write_seed_report(&root, seed)?;
        experiment::evaluate_seed(&root, seed)
    })
    .map(rows)
    .map_err(py_err)
}

/// Median over every per-seed report under `root`, with the seed count.
#[pyfunction]
fn median_report(root: PathBuf) -> PyResult<(Vec<PyReportRow>, usize)> {
    let (r, n) = experiment::median_report(&root).map_err(py_err)?;
    Ok((rows(r), n))
}

#[pyfunction]
#[pyo3(signature = (h, r, t, norm = "l1"))]
fn score_transe(h: Vec<f64>, r: Vec<f64>, t: Vec<f64>, norm: &str) -> PyResult<f64> {
    embedding::score_transe(&h, &r, &t, parse::<Norm>(norm)?).map_err(py_err)
}

/// ComplEx score with vectors in `[re..., im...]` layout.
#[pyfunction]
fn score_complex(h: Vec<f64>, r: Vec<f64>, t: Vec<f64>) -> PyResult<f64> {
    embedding::score_complex(&h, &r, &t).map_err(py_err)
}

/// Gradients of the score with respect to head, relation and tail.
#[pyfunction]
#[pyo3(signature = (model, h, r, t, norm = "l1"))]
fn grad_score(
    model: &str,
    h: Vec<f64>,
    r: Vec<f64>,
    t: Vec<f64>,
    norm: &str,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let g = embedding::grad_score(parse::<ModelKind>(model)?, &h, &r, &t, parse::<Norm>(norm)?)
        .map_err(py_err)?;
    Ok((g.head, g.relation, g.tail))
}

/// Linear beta schedule.
#[pyclass(name = "Schedule", frozen)]
struct PySchedule {
    inner: DiffusionSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (steps = 50, beta_start = 1e-4, beta_end = 0.02))]
    fn new(steps: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        diffusion::make_schedule(steps, beta_start, beta_end)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    #[getter]
    fn betas(&self) -> Vec<f64> {
        self.inner.betas().to_vec()
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        self.inner.check_step(t).map_err(py_err)?;
        Ok(self.inner.alpha_bar(t))
    }

    /// Closed-form jump from `x0` to step `t` with noise `z`.
    fn forward_to(&self, x0: Vec<f64>, t: usize, z: Vec<f64>) -> PyResult<Vec<f64>> {
        diffusion::forward_to(&x0, t, &self.inner, &z).map_err(py_err)
    }

    fn forward_step(&self, x_prev: Vec<f64>, t: usize, z: Vec<f64>) -> PyResult<Vec<f64>> {
        diffusion::forward_step(&x_prev, t, &self.inner, &z).map_err(py_err)
    }
}

#[pyfunction]
fn mrr(ranks: Vec<f64>) -> PyResult<f64> {
    eval::mrr(&ranks).map_err(py_err)
}

#[pyfunction]
fn hits_at_n(ranks: Vec<f64>, n: usize) -> PyResult<f64> {
    eval::hits_at_n(&ranks, n).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "feddm")]
fn feddm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyReportRow>()?;
    m.add_class::<PySchedule>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(median_report, m)?)?;
    m.add_function(wrap_pyfunction!(score_transe, m)?)?;
    m.add_function(wrap_pyfunction!(score_complex, m)?)?;
    m.add_function(wrap_pyfunction!(grad_score, m)?)?;
    m.add_function(wrap_pyfunction!(mrr, m)?)?;
    m.add_function(wrap_pyfunction!(hits_at_n, m)?)?;
    Ok(())
}
