//! Python bindings: cohorts, GDM and ridge fits, analytic and permutation
//! inference, and config-driven runs.
//!
//! Matrices cross the boundary as lists of rows.

use gdm::baselines::{haufe_transform, RidgeModel};
use gdm::harness::{self, EvalOptions, HyperGrid, Method};
use gdm::inference::{self, PermutationMode};
use gdm::model::{Cohort as CoreCohort, CovariateBasis, LabelTransform, Labels, ResidualizerFit, DEFAULT_RANK_TOL};
use gdm::solver::{self, GdmHyperParams, RoutePreference};
use gdm::workflow::{self, RunConfig};
use gdm::{io, synth, GdmError};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: GdmError) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn matrix(rows: &[Vec<f64>], ncols_if_empty: usize) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(ncols_if_empty, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have unequal lengths"));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(FromPyObject)]
enum LabelArg {
    Text(Vec<String>),
    Number(Vec<f64>),
}

impl LabelArg {
    fn into_labels(self) -> Labels {
        match self {
            LabelArg::Text(v) => io::infer_labels(v),
            LabelArg::Number(v) => io::infer_labels(v.iter().map(|x| x.to_string()).collect()),
        }
    }
}

/// Subjects × features, with labels, covariates and optional site tags.
#[pyclass(name = "Cohort", module = "gdm_py")]
struct PyCohort {
    inner: CoreCohort,
}

#[pymethods]
impl PyCohort {
    #[new]
    #[pyo3(signature = (features, labels, covariates=None, covariate_names=None, site=None, feature_names=None, subject_ids=None))]
    fn new(
        features: Vec<Vec<f64>>,
        labels: LabelArg,
        covariates: Option<Vec<Vec<f64>>>,
        covariate_names: Option<Vec<String>>,
        site: Option<Vec<String>>,
        feature_names: Option<Vec<String>>,
        subject_ids: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let x = matrix(&features, 0)?;
        let c = match covariates {
            Some(c) => matrix(&c, 0)?,
            None => DMatrix::zeros(x.nrows(), 0),
        };
        let names = covariate_names.unwrap_or_else(|| (0..c.ncols()).map(|j| format!("c{}", j + 1)).collect());
        let fnames = feature_names.unwrap_or_else(|| (0..x.ncols()).map(|j| format!("f{}", j + 1)).collect());
        let ids = subject_ids.unwrap_or_else(|| (0..x.nrows()).map(|i| format!("s{i}")).collect());
        let inner = CoreCohort::new(x, labels.into_labels(), c, names, site, fnames, ids).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.features)
    }

    #[getter]
    fn covariates(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.covariates)
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels.as_strings()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names.clone()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    #[getter]
    fn sites(&self) -> Option<Vec<String>> {
        self.inner.site.clone()
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if indices.iter().any(|&i| i >= self.inner.n()) {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(Self {
            inner: self.inner.subset(&indices),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_cohort(&self.inner, path.as_ref()).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Cohort(n={}, d={}, covariates={:?})", self.inner.n(), self.inner.d(), self.inner.covariate_names)
    }
}

/// A fitted GDM: pattern `j`, covariate bias `w0` and generator terms `a0`.
#[pyclass(name = "GdmModel", module = "gdm_py")]
struct PyGdmModel {
    inner: solver::GdmModel,
    covariate_names: Vec<String>,
}

#[pymethods]
impl PyGdmModel {
    #[getter]
    fn j(&self) -> Vec<f64> {
        vec(&self.inner.j)
    }

    #[getter]
    fn w0(&self) -> Vec<f64> {
        vec(&self.inner.w0)
    }

    #[getter]
    fn a0(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.a0)
    }

    #[getter]
    fn lambda1(&self) -> f64 {
        self.inner.hyper.lambda1
    }

    #[getter]
    fn lambda2(&self) -> f64 {
        self.inner.hyper.lambda2
    }

    /// Intercept first, then the raw covariates.
    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.covariate_names.clone()
    }

    #[getter]
    fn route(&self) -> &'static str {
        match self.inner.route {
            solver::SolverRoute::Primal => "primal",
            solver::SolverRoute::Dual => "dual",
        }
    }

    /// Scores and predicted classes for a cohort with the same features and
    /// covariates.
    fn predict(&self, cohort: &PyCohort) -> PyResult<(Vec<f64>, Vec<String>)> {
        let c = gdm::model::augment_covariates(&cohort.inner.covariates);
        let p = self.inner.predict(&cohort.inner.features, &c).map_err(py_err)?;
        Ok((vec(&p.scores), p.classes))
    }
}

/// Ridge regression on covariate-residualized features.
#[pyclass(name = "RidgeModel", module = "gdm_py")]
struct PyRidgeModel {
    inner: RidgeModel,
    x_res: DMatrix<f64>,
}

#[pymethods]
impl PyRidgeModel {
    #[getter]
    fn w(&self) -> Vec<f64> {
        vec(&self.inner.w)
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    /// Activation pattern `Σw / (wᵀΣw)` of the training features.
    fn haufe_pattern(&self) -> PyResult<Vec<f64>> {
        Ok(vec(&haufe_transform(&self.inner.w, &self.x_res).map_err(py_err)?.a))
    }

    fn predict(&self, cohort: &PyCohort) -> PyResult<(Vec<f64>, Vec<String>)> {
        let c = gdm::model::augment_covariates(&cohort.inner.covariates);
        let p = self.inner.predict(&cohort.inner.features, &c).map_err(py_err)?;
        Ok((vec(&p.scores), p.classes))
    }
}

fn prepared(cohort: &PyCohort) -> PyResult<(DVector<f64>, LabelTransform, CovariateBasis)> {
    let c = &cohort.inner;
    let (y, t) = LabelTransform::fit(&c.labels).map_err(py_err)?;
    let basis = CovariateBasis::build(&c.covariates, &c.covariate_names, DEFAULT_RANK_TOL).map_err(py_err)?;
    Ok((y, t, basis))
}

fn route_pref(route: &str) -> PyResult<RoutePreference> {
    match route {
        "auto" => Ok(RoutePreference::Auto),
        "primal" => Ok(RoutePreference::Primal),
        "dual" => Ok(RoutePreference::Dual),
        other => Err(PyValueError::new_err(format!("unknown route '{other}'"))),
    }
}

/// Fit a GDM with fixed hyperparameters.
#[pyfunction]
#[pyo3(signature = (cohort, lambda1, lambda2, route="auto"))]
fn fit(cohort: &PyCohort, lambda1: f64, lambda2: f64, route: &str) -> PyResult<PyGdmModel> {
    let hyper = GdmHyperParams::new(lambda1, lambda2).map_err(py_err)?;
    let (y, t, basis) = prepared(cohort)?;
    let inner = solver::fit(&cohort.inner.features, &y, &basis, &hyper, &t, route_pref(route)?).map_err(py_err)?;
    Ok(PyGdmModel {
        inner,
        covariate_names: basis.column_names().to_vec(),
    })
}

/// Fit ridge regression on residualized features.
#[pyfunction]
#[pyo3(signature = (cohort, lambda_))]
fn fit_ridge(cohort: &PyCohort, lambda_: f64) -> PyResult<PyRidgeModel> {
    let (y, t, basis) = prepared(cohort)?;
    let x = &cohort.inner.features;
    let inner = RidgeModel::fit(x, &basis, &y, &t, lambda_).map_err(py_err)?;
    let x_res = ResidualizerFit::fit(x, &basis)
        .and_then(|r| r.apply(x, basis.matrix()))
        .map_err(py_err)?;
    Ok(PyRidgeModel { inner, x_res })
}

/// Analytic null standard deviations, p-values and BH rejections of J.
#[pyfunction]
#[pyo3(signature = (cohort, lambda1, lambda2, fdr_q=0.05))]
fn analytic_inference<'py>(py: Python<'py>, cohort: &PyCohort, lambda1: f64, lambda2: f64, fdr_q: f64) -> PyResult<Bound<'py, PyDict>> {
    let hyper = GdmHyperParams::new(lambda1, lambda2).map_err(py_err)?;
    let (y, _, basis) = prepared(cohort)?;
    let r = inference::analytic_inference(&cohort.inner.features, &y, &basis, &hyper, fdr_q).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("statistic", r.statistic)?;
    out.set_item("sigma", r.sigma)?;
    out.set_item("p", r.p_raw)?;
    out.set_item("rejected", r.rejected)?;
    out.set_item("zero_sigma", r.zero_sigma)?;
    Ok(out)
}

/// Permutation p-values of J. `mode` is "full_refit" or "fixed_q".
#[pyfunction]
#[pyo3(signature = (cohort, lambda1, lambda2, n_perm, seed=0, mode="full_refit"))]
fn permutation_pvalues<'py>(
    py: Python<'py>,
    cohort: &PyCohort,
    lambda1: f64,
    lambda2: f64,
    n_perm: usize,
    seed: u64,
    mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = match mode {
        "full_refit" => PermutationMode::FullRefit,
        "fixed_q" => PermutationMode::FixedQ,
        other => return Err(PyValueError::new_err(format!("unknown mode '{other}'"))),
    };
    let hyper = GdmHyperParams::new(lambda1, lambda2).map_err(py_err)?;
    let (y, _, basis) = prepared(cohort)?;
    let r = py
        .detach(|| inference::permutation_pvalues(&cohort.inner.features, &y, &basis, &hyper, n_perm, seed, mode))
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("p", r.p)?;
    out.set_item("observed", r.observed)?;
    out.set_item("perm_std", r.perm_std)?;
    out.set_item("n_permutations", r.n_permutations)?;
    out.set_item("exhaustive", r.exhaustive)?;
    Ok(out)
}

/// Benjamini–Hochberg rejections at level `q`.
#[pyfunction]
fn bh_fdr(p: Vec<f64>, q: f64) -> PyResult<Vec<bool>> {
    inference::bh_fdr(&p, q).map_err(py_err)
}

/// Inner cross-validation; returns the chosen (lambda1, lambda2) and its
/// mean validation accuracy. `lambda2` is None for ridge and haufe.
#[pyfunction]
#[pyo3(signature = (cohort, method="gdm", seed=0, folds=5, lambda1_grid=None, lambda2_grid=None))]
fn cross_validate(
    py: Python<'_>,
    cohort: &PyCohort,
    method: &str,
    seed: u64,
    folds: usize,
    lambda1_grid: Option<Vec<f64>>,
    lambda2_grid: Option<Vec<f64>>,
) -> PyResult<(f64, Option<f64>, Option<f64>)> {
    let method: Method = method.parse().map_err(py_err)?;
    let mut grid = HyperGrid::default();
    if let Some(g) = lambda1_grid {
        grid.lambda1 = g;
    }
    if let Some(g) = lambda2_grid {
        grid.lambda2 = g;
    }
    let options = EvalOptions {
        grid,
        folds,
        ..Default::default()
    };
    let r = py
        .detach(|| harness::cross_validate(&cohort.inner, method, &options, seed))
        .map_err(py_err)?;
    Ok((r.best.lambda1, r.best.lambda2, r.best_accuracy))
}

/// Generate a synthetic cohort from a JSON generator spec; returns the
/// cohort and the ground-truth record as JSON.
#[pyfunction]
fn generate(spec_json: &str) -> PyResult<(PyCohort, String)> {
    let spec: synth::GeneratorSpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (inner, truth) = synth::generate(&spec).map_err(py_err)?;
    let truth = serde_json::to_string(&truth).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((PyCohort { inner }, truth))
}

/// JSON text of a bundled generator spec.
#[pyfunction]
fn standard_spec(name: &str) -> PyResult<String> {
    let spec = synth::standard_spec(name).map_err(py_err)?;
    serde_json::to_string(&spec).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyfunction]
fn load_cohort(path: &str) -> PyResult<PyCohort> {
    Ok(PyCohort {
        inner: io::load_cohort(path.as_ref()).map_err(py_err)?,
    })
}

/// Execute a run configuration (JSON text); returns the files written.
#[pyfunction]
fn run(py: Python<'_>, config_json: &str) -> PyResult<Vec<String>> {
    let config = RunConfig::from_json(config_json).map_err(py_err)?;
    let out = py.detach(|| workflow::run(&config)).map_err(py_err)?;
    Ok(out.files)
}

#[pymodule]
fn gdm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", gdm::VERSION)?;
    m.add_class::<PyCohort>()?;
    m.add_class::<PyGdmModel>()?;
    m.add_class::<PyRidgeModel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ridge, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_inference, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_pvalues, m)?)?;
    m.add_function(wrap_pyfunction!(bh_fdr, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(standard_spec, m)?)?;
    m.add_function(wrap_pyfunction!(load_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
