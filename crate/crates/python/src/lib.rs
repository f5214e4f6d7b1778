//! Python bindings: load or simulate a cohort, fit model specs, compare
//! effect tables.
//!
//! Results cross the boundary as plain dicts and lists (via JSON), so the
//! Python side needs nothing beyond the standard library.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use vam_core::comparison;
use vam_core::effects;
use vam_core::error::{ErrorKind, VamError};
use vam_core::pipeline::{self, FitOutput, FitSettings};
use vam_core::simulation::{self, Simulated};
use vam_core::{canonical_specs, IngestConfig, ModelSpec, SimConfig};

fn py_err(e: VamError) -> PyErr {
    let msg = format!("{}: {e}", e.kind().code());
    match e.kind() {
        ErrorKind::Validation => PyValueError::new_err(msg),
        ErrorKind::Estimation => PyRuntimeError::new_err(msg),
        ErrorKind::Io => PyOSError::new_err(msg),
    }
}

/// Serialize with serde and hand the result to Python's `json.loads`.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_spec(model: &str, prior: &str) -> PyResult<ModelSpec> {
    Ok(ModelSpec::new(
        model.parse().map_err(py_err)?,
        prior.parse().map_err(py_err)?,
    ))
}

/// An analysis-ready cohort.
#[pyclass(module = "pyvam", frozen)]
struct Cohort {
    inner: vam_core::Cohort,
}

#[pymethods]
impl Cohort {
    /// Read and validate `students.csv` and `schools.csv`.
    #[staticmethod]
    fn load(students: PathBuf, schools: PathBuf) -> PyResult<Cohort> {
        let inner = vam_core::load_cohort(&students, &schools, &IngestConfig::default()).map_err(py_err)?;
        Ok(Cohort { inner })
    }

    #[getter]
    fn n_students(&self) -> usize {
        self.inner.n_students()
    }

    #[getter]
    fn n_schools(&self) -> usize {
        self.inner.n_schools()
    }

    /// Row counts and per-variable category counts.
    fn inventory<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.inventory())
    }

    fn __repr__(&self) -> String {
        format!("Cohort({} students, {} schools)", self.inner.n_students(), self.inner.n_schools())
    }
}

/// A synthetic cohort with its ground truth.
#[pyclass(module = "pyvam", frozen)]
struct Simulation {
    inner: Simulated,
}

#[pymethods]
impl Simulation {
    #[getter]
    fn cohort(&self) -> Cohort {
        Cohort {
            inner: self.inner.cohort.clone(),
        }
    }

    /// `{school_id: true effect}` in standardized outcome units.
    fn true_effects(&self) -> std::collections::BTreeMap<String, f64> {
        self.inner
            .truth
            .school_effects
            .iter()
            .map(|t| (t.school_id.clone(), t.true_effect))
            .collect()
    }

    /// Write students, schools and truth CSVs to `dir`.
    fn write(&self, dir: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&dir).map_err(|e| py_err(VamError::io(&dir, e)))?;
        pipeline::write_simulation(&dir, &self.inner).map_err(py_err)
    }
}

/// One fitted model spec.
#[pyclass(module = "pyvam", frozen)]
struct Fit {
    inner: FitOutput,
}

#[pymethods]
impl Fit {
    /// Label such as `CVA-A:included`.
    #[getter]
    fn label(&self) -> String {
        self.inner.spec.label()
    }

    /// Label of the grid spec with the identical design, if any.
    #[getter]
    fn equivalent_to(&self) -> Option<String> {
        self.inner.equivalent_to.map(|s| s.label())
    }

    #[getter]
    fn r_squared(&self) -> f64 {
        self.inner.fit.r_squared
    }

    #[getter]
    fn adjusted_r_squared(&self) -> f64 {
        self.inner.fit.adjusted_r_squared
    }

    /// Headline statistics as written to `summary.json`.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.summary())
    }

    /// Per-school rows: effect, interval, category, shrunk effect.
    fn effects<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.effects.table.effects)
    }

    /// Coefficient rows with cluster-robust standard errors.
    fn coefficients<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.fit.coefficient_table())
    }

    fn __repr__(&self) -> String {
        format!("Fit({}, n={})", self.inner.spec.label(), self.inner.fit.n)
    }
}

/// Generate a synthetic cohort. `preset` is `default` or `full-scale`;
/// keyword overrides apply on top of it.
#[pyfunction]
#[pyo3(signature = (seed=42, preset="default", n_schools=None, min_students=None, max_students=None, sigma2_u=None))]
fn simulate(
    seed: u64,
    preset: &str,
    n_schools: Option<usize>,
    min_students: Option<usize>,
    max_students: Option<usize>,
    sigma2_u: Option<f64>,
) -> PyResult<Simulation> {
    let mut cfg = SimConfig::preset(preset).map_err(py_err)?;
    cfg.seed = seed;
    cfg.n_schools = n_schools.unwrap_or(cfg.n_schools);
    cfg.min_students = min_students.unwrap_or(cfg.min_students);
    cfg.max_students = max_students.unwrap_or(cfg.max_students);
    cfg.sigma2_u_true = sigma2_u.unwrap_or(cfg.sigma2_u_true);
    cfg.validate().map_err(py_err)?;
    let inner = simulation::generate_cohort(&cfg, &IngestConfig::default()).map_err(py_err)?;
    Ok(Simulation { inner })
}

fn run_fits(cohort: &Cohort, specs: &[ModelSpec], shrinkage: bool) -> PyResult<Vec<Fit>> {
    let settings = FitSettings {
        shrinkage,
        ..FitSettings::default()
    };
    let outputs = pipeline::fit_specs(&cohort.inner, specs, settings).map_err(py_err)?;
    Ok(outputs.into_iter().map(|inner| Fit { inner }).collect())
}

/// Fit one spec, e.g. `fit(cohort, "cva-a", "both")`.
#[pyfunction]
#[pyo3(signature = (cohort, model, prior="included", shrinkage=true))]
fn fit(cohort: &Cohort, model: &str, prior: &str, shrinkage: bool) -> PyResult<Fit> {
    let spec = parse_spec(model, prior)?;
    Ok(run_fits(cohort, &[spec], shrinkage)?.remove(0))
}

/// Fit all 20 grid specs in grid order.
#[pyfunction]
#[pyo3(signature = (cohort, shrinkage=true))]
fn fit_all(cohort: &Cohort, shrinkage: bool) -> PyResult<Vec<Fit>> {
    let specs: Vec<ModelSpec> = canonical_specs().into_iter().map(|c| c.spec).collect();
    run_fits(cohort, &specs, shrinkage)
}

/// Correlation matrices, category shares and variant lines for a list of
/// fits. Pass the cohort to get scatter highlighting flags.
#[pyfunction]
#[pyo3(signature = (fits, cohort=None))]
fn compare<'py>(py: Python<'py>, fits: Vec<PyRef<'py, Fit>>, cohort: Option<&Cohort>) -> PyResult<Bound<'py, PyAny>> {
    let tables: Vec<(String, effects::EffectTable)> = fits
        .iter()
        .map(|f| (f.inner.spec.label(), f.inner.effects.table.clone()))
        .collect();
    let flags = cohort.map(|c| pipeline::school_flags(&c.inner)).unwrap_or_default();
    let report = pipeline::compare(&tables, &flags).map_err(py_err)?;
    to_py(py, &report)
}

#[pyfunction]
fn pearson(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    comparison::pearson(&a, &b).map_err(py_err)
}

#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    comparison::spearman(&a, &b).map_err(py_err)
}

/// Category label for an effect and its 95% interval.
#[pyfunction]
fn classify(effect: f64, ci_low: f64, ci_high: f64) -> &'static str {
    effects::classify_effect(effect, (ci_low, ci_high)).label()
}

/// Empirical-Bayes weight for a school of `n` students.
#[pyfunction]
fn shrinkage_factor(sigma2_u: f64, sigma2_e: f64, n: usize) -> f64 {
    effects::shrinkage_factor(sigma2_u, sigma2_e, n)
}

/// `(label, equivalent_to)` for the 20 grid specs.
#[pyfunction]
fn specs() -> Vec<(String, Option<String>)> {
    canonical_specs()
        .into_iter()
        .map(|c| (c.spec.label(), c.equivalent_to.map(|s| s.label())))
        .collect()
}

#[pymodule]
fn pyvam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Cohort>()?;
    m.add_class::<Simulation>()?;
    m.add_class::<Fit>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_all, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(shrinkage_factor, m)?)?;
    m.add_function(wrap_pyfunction!(specs, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
