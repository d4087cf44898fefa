//! Python bindings: training sets, model fitting and prediction, the covariate
//! PCA and improvement-factor intervals.

use std::str::FromStr;

use mortgp::analysis;
use mortgp::lifetable;
use mortgp::{CovariateTable, FitConfig, InputPoint, KernelFamily, PcaResult, StateId};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn state(code: &str) -> PyResult<StateId> {
    StateId::from_str(code).map_err(value_error)
}

/// Log-mortality training data for one or more populations.
#[pyclass(module = "pymortgp", frozen, from_py_object)]
#[derive(Clone)]
struct TrainingSet {
    inner: mortgp::TrainingSet,
}

#[pymethods]
impl TrainingSet {
    /// Parse the canonical training CSV (`population,age,year,log_mortality`).
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self { inner: mortgp::TrainingSet::read_csv(text.as_bytes()).map_err(value_error)? })
    }

    /// Build a single-population set from `(age, year, log_mortality)` rows.
    #[staticmethod]
    fn from_rows(population: String, rows: Vec<(u32, i32, f64)>) -> Self {
        Self {
            inner: mortgp::TrainingSet {
                populations: vec![population],
                inputs: rows.iter().map(|r| (r.0, r.1)).collect(),
                outputs: rows.iter().map(|r| r.2).collect(),
                labels: vec![0; rows.len()],
                excluded: Vec::new(),
            },
        }
    }

    /// Concatenate sets; the first becomes output 0.
    #[staticmethod]
    fn stack(parts: Vec<TrainingSet>) -> Self {
        let parts: Vec<_> = parts.into_iter().map(|p| p.inner).collect();
        Self { inner: mortgp::TrainingSet::stack(&parts) }
    }

    #[getter]
    fn populations(&self) -> Vec<String> {
        self.inner.populations.clone()
    }

    /// `(population index, age, year, log_mortality)` per observation.
    fn rows(&self) -> Vec<(usize, u32, i32, f64)> {
        self.inner.inputs.iter().zip(&self.inner.outputs).zip(&self.inner.labels).map(|((&(a, t), &y), &l)| (l, a, t, y)).collect()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(value_error)?;
        String::from_utf8(buf).map_err(value_error)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("TrainingSet(populations={:?}, n={})", self.inner.populations, self.inner.len())
    }
}

/// A fitted multi-output GP with its cached factorization.
#[pyclass(module = "pymortgp", frozen)]
struct Model {
    inner: mortgp::FittedModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: mortgp::FittedModel::from_json(text).map_err(value_error)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(value_error)
    }

    #[getter]
    fn log_likelihood(&self) -> f64 {
        self.inner.diagnostics.log_likelihood
    }

    #[getter]
    fn family(&self) -> String {
        self.inner.hyperparameters.kernel.family.to_string()
    }

    /// Age, period and cohort lengthscales.
    #[getter]
    fn lengthscales(&self) -> [f64; 3] {
        self.inner.hyperparameters.kernel.lengthscales
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.inner.hyperparameters.kernel.variance
    }

    /// Noise variance per output.
    #[getter]
    fn noise(&self) -> Vec<f64> {
        self.inner.hyperparameters.noise.clone()
    }

    #[getter]
    fn populations(&self) -> Vec<String> {
        self.inner.training.populations.clone()
    }

    /// Cross-population correlation matrix implied by the coregionalization.
    fn correlations(&self) -> Vec<Vec<f64>> {
        let c = self.inner.hyperparameters.coregionalization.correlations();
        c.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Posterior mean and standard deviation at `(age, year, population)`
    /// points. `latent` drops the observation noise.
    #[pyo3(signature = (points, latent = true))]
    fn predict(&self, points: Vec<(f64, f64, usize)>, latent: bool) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let pts: Vec<_> = points.iter().map(|&(a, t, l)| InputPoint::new(a, t, l)).collect();
        let pred = self.inner.predict(&pts, false, latent).map_err(value_error)?;
        Ok((pred.mean, pred.std))
    }

    /// Improvement factor `1 − exp(m(a, t) − m(a, t − 1))` with its credible
    /// interval as `(lower, point, upper)`.
    #[pyo3(signature = (population, age, year, level = 0.95))]
    fn improvement(&self, population: usize, age: u32, year: i32, level: f64) -> PyResult<(f64, f64, f64)> {
        let i = analysis::mi_interval(&self.inner, population, age, year, level).map_err(value_error)?;
        Ok((i.lower, i.point, i.upper))
    }

    fn __repr__(&self) -> String {
        format!("Model(family={}, populations={:?}, lml={:.4})", self.family(), self.inner.training.populations, self.log_likelihood())
    }
}

/// Fit by profile maximum likelihood with seeded restarts.
#[pyfunction]
#[pyo3(signature = (data, family = "matern52", q = 3, restarts = 10, seed = 0, max_iterations = 500))]
fn fit(py: Python<'_>, data: &TrainingSet, family: &str, q: usize, restarts: usize, seed: u64, max_iterations: u64) -> PyResult<Model> {
    let config = FitConfig {
        family: KernelFamily::from_str(family).map_err(value_error)?,
        q: q.min(data.inner.population_count()),
        restarts,
        seed,
        max_iterations,
        ..FitConfig::default()
    };
    let inner = py.detach(|| mortgp::gp::fit(&data.inner, &config)).map_err(value_error)?;
    Ok(Model { inner })
}

/// Covariate PCA over standardized columns.
#[pyclass(module = "pymortgp", frozen)]
struct Pca {
    inner: PcaResult,
}

#[pymethods]
impl Pca {
    /// Parse a `state,<covariate>...` CSV and keep `k` components.
    #[staticmethod]
    #[pyo3(signature = (text, k = 3))]
    fn from_csv(text: &str, k: usize) -> PyResult<Self> {
        let table = CovariateTable::read_csv(text.as_bytes()).map_err(value_error)?;
        Ok(Self { inner: table.pca(k).map_err(value_error)? })
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.all_eigenvalues.clone()
    }

    #[getter]
    fn proportion_of_variance(&self) -> Vec<f64> {
        self.inner.proportion_of_variance()
    }

    /// Eigenvalue-weighted distance between two states in the retained components.
    fn distance(&self, a: &str, b: &str) -> PyResult<f64> {
        self.inner.distance(state(a)?, state(b)?).map_err(value_error)
    }
}

/// `ln(deaths / exposure)`.
#[pyfunction]
fn log_mortality(deaths: f64, exposure: f64) -> PyResult<f64> {
    lifetable::log_mortality(deaths, exposure).map_err(value_error)
}

/// Map a Gaussian log-rate difference `N(mean, variance)` to an improvement
/// factor interval `(lower, point, upper)`.
#[pyfunction]
#[pyo3(signature = (mean, variance, level = 0.95))]
fn improvement_interval(mean: f64, variance: f64, level: f64) -> PyResult<(f64, f64, f64)> {
    let i = analysis::mi_interval_from_gaussian(mean, variance, level).map_err(value_error)?;
    Ok((i.lower, i.point, i.upper))
}

#[pymodule]
fn pymortgp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<TrainingSet>()?;
    m.add_class::<Model>()?;
    m.add_class::<Pca>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(log_mortality, m)?)?;
    m.add_function(wrap_pyfunction!(improvement_interval, m)?)?;
    Ok(())
}
