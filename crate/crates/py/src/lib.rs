//! Python bindings: measures, the centered cocycle, Laplace and rate estimators, and the pipeline.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use hyperwalk::error::Error;
use hyperwalk::estimators::{self, Backend, LaplaceCurve, McBudget};
use hyperwalk::geometry::{BoundaryTarget, GroupElement, Model};
use hyperwalk::harness::{run_stages, ExperimentConfig, Stage};
use hyperwalk::martingale::{self, inequality, DriftCocycle};
use hyperwalk::walk::measure::StepMeasure;
use hyperwalk::walk::path::sample_path as sample;
use hyperwalk::walk::rng::SeedSpec;

fn err(e: Error) -> PyErr {
    match e {
        Error::Diverged { .. } | Error::InvariantViolation(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Converts any serializable value to plain Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn backend(paths: Option<usize>, seed: u64, workers: usize) -> Backend {
    match paths {
        None => Backend::ExactDp,
        Some(paths) => Backend::MonteCarlo(McBudget { paths, seed, workers }),
    }
}

fn targets(model: &Model, texts: &[String]) -> PyResult<Vec<BoundaryTarget>> {
    texts.iter().map(|t| model.parse_target(t).map_err(err)).collect()
}

/// A finitely supported step distribution on a free group or on the hyperbolic plane.
#[pyclass(frozen, skip_from_py_object, name = "Measure", module = "hyperwalk")]
#[derive(Clone)]
struct PyMeasure {
    inner: StepMeasure,
}

#[pymethods]
impl PyMeasure {
    /// Uniform measure on the generators of a free group and their inverses.
    #[staticmethod]
    #[pyo3(signature = (rank = 2, depth = 8))]
    fn uniform(rank: u32, depth: usize) -> PyResult<Self> {
        let inner = StepMeasure::uniform_free(Model::Free { rank, depth }).map_err(err)?;
        Ok(PyMeasure { inner })
    }

    /// Rank-2 nearest-neighbour measure putting mass `bias` on `a`, the rest split evenly.
    #[staticmethod]
    #[pyo3(signature = (depth = 8, bias = 0.4))]
    fn biased(depth: usize, bias: f64) -> PyResult<Self> {
        if !(bias > 0.0 && bias < 1.0) {
            return Err(PyValueError::new_err("bias must lie in (0, 1)"));
        }
        let model = Model::Free { rank: 2, depth };
        let rest = (1.0 - bias) / 3.0;
        let atoms = [("a", bias), ("A", rest), ("b", rest), ("B", rest)]
            .iter()
            .map(|&(w, p)| Ok((GroupElement::parse(w)?, p)))
            .collect::<Result<Vec<_>, Error>>()
            .map_err(err)?;
        Ok(PyMeasure {
            inner: StepMeasure::new(model, atoms, 1.0).map_err(err)?,
        })
    }

    /// Measure from `(element, probability)` pairs; elements are words like `"ab"` or
    /// matrices like `"[[2,0],[0,0.5]]"` (then `model="plane"`).
    #[staticmethod]
    #[pyo3(signature = (atoms, model = "free", rank = 2, depth = 8, alpha = 1.0))]
    fn custom(atoms: Vec<(String, f64)>, model: &str, rank: u32, depth: usize, alpha: f64) -> PyResult<Self> {
        let model = match model {
            "free" => Model::Free { rank, depth },
            "plane" => Model::Plane,
            other => return Err(PyValueError::new_err(format!("unknown model {other:?}"))),
        };
        let atoms = atoms
            .iter()
            .map(|(w, p)| Ok((GroupElement::parse(w)?, *p)))
            .collect::<Result<Vec<_>, Error>>()
            .map_err(err)?;
        Ok(PyMeasure {
            inner: StepMeasure::new(model, atoms, alpha).map_err(err)?,
        })
    }

    #[getter]
    fn atoms(&self) -> Vec<(String, f64)> {
        self.inner.iter().map(|(g, p)| (g.to_string(), p)).collect()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    /// Drift `ℓ` with its standard error.
    #[pyo3(signature = (seed = 0, workers = 1))]
    fn drift<'py>(&self, py: Python<'py>, seed: u64, workers: usize) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &martingale::drift_of(&self.inner, seed, workers))
    }

    /// Drift estimate `E κ_n / n`; exact when `paths` is None.
    #[pyo3(signature = (n, paths = None, seed = 0, workers = 1))]
    fn drift_at<'py>(
        &self,
        py: Python<'py>,
        n: usize,
        paths: Option<usize>,
        seed: u64,
        workers: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &estimators::estimate_drift(&self.inner, n, backend(paths, seed, workers)).map_err(err)?)
    }

    /// CLT variance estimate `Var κ_n / n`; exact when `paths` is None.
    #[pyo3(signature = (n, paths = None, seed = 0, workers = 1))]
    fn clt_variance<'py>(
        &self,
        py: Python<'py>,
        n: usize,
        paths: Option<usize>,
        seed: u64,
        workers: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let v = estimators::estimate_clt_variance(&self.inner, n, backend(paths, seed, workers)).map_err(err)?;
        to_py(py, &v)
    }

    fn __repr__(&self) -> String {
        format!("Measure({} atoms, alpha={})", self.inner.len(), self.inner.alpha())
    }
}

/// One sampled trajectory: `κ_n` and `σ(L_n, x)` for each target.
#[pyfunction]
#[pyo3(signature = (measure, n, seed = 0, index = 0, targets = vec![]))]
fn sample_path<'py>(
    py: Python<'py>,
    measure: &PyMeasure,
    n: usize,
    seed: u64,
    index: u64,
    targets: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let xs = self::targets(measure.inner.model(), &targets)?;
    to_py(py, &sample(&measure.inner, n, SeedSpec::new(seed, index), &xs, true).map_err(err)?)
}

/// Estimated log-Laplace transform on a `(λ, n)` grid.
#[pyclass(frozen, name = "Laplace", module = "hyperwalk")]
struct PyLaplace {
    inner: LaplaceCurve,
}

#[pymethods]
impl PyLaplace {
    /// Exact when `paths` is None (uniform free-group measures only).
    #[new]
    #[pyo3(signature = (measure, lambdas, ns, lambda_max = None, paths = None, seed = 0, workers = 1, target = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        measure: &PyMeasure,
        lambdas: Vec<f64>,
        ns: Vec<usize>,
        lambda_max: Option<f64>,
        paths: Option<usize>,
        seed: u64,
        workers: usize,
        target: Option<String>,
    ) -> PyResult<Self> {
        let m = &measure.inner;
        let lmax = lambda_max.unwrap_or(estimators::LAMBDA_MAX_FRACTION * m.alpha());
        let x = target.map(|t| m.model().parse_target(&t)).transpose().map_err(err)?;
        let inner = estimators::estimate_laplace(m, &lambdas, &ns, lmax, backend(paths, seed, workers), x.as_ref())
            .map_err(err)?;
        Ok(PyLaplace { inner })
    }

    #[getter]
    fn lambdas(&self) -> Vec<f64> {
        self.inner.lambdas.clone()
    }

    #[getter]
    fn ns(&self) -> Vec<usize> {
        self.inner.ns.clone()
    }

    /// `Λ̂_n(λ)` for every λ at the `ni`-th horizon.
    fn values(&self, ni: usize) -> PyResult<Vec<f64>> {
        self.check(ni)?;
        Ok(self.inner.row(ni))
    }

    fn ses(&self, ni: usize) -> PyResult<Vec<f64>> {
        self.check(ni)?;
        Ok(self.inner.row_se(ni))
    }

    /// Every cell with its standard error, ESS and Fekete bound.
    fn cells<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.cells)
    }

    /// Second-order coefficient `c` in `Λ(λ) ≈ ℓλ + cλ²` near 0.
    #[pyo3(signature = (ell, window = 0.1))]
    fn curvature<'py>(&self, py: Python<'py>, ell: f64, window: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &estimators::curvature_at_drift(&self.inner, ell, window))
    }

    /// Legendre transform of the `ni`-th horizon on the points `xs`.
    fn rate<'py>(&self, py: Python<'py>, ni: usize, xs: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        self.check(ni)?;
        to_py(py, &estimators::legendre_transform(&self.inner, ni, &xs).map_err(err)?)
    }
}

impl PyLaplace {
    fn check(&self, ni: usize) -> PyResult<()> {
        if ni >= self.inner.ns.len() {
            return Err(PyValueError::new_err(format!("horizon index {ni} out of range")));
        }
        Ok(())
    }
}

/// Legendre transform of tabulated values `Λ(λ)`.
#[pyfunction]
#[pyo3(signature = (lambdas, values, xs, ses = None))]
fn legendre<'py>(
    py: Python<'py>,
    lambdas: Vec<f64>,
    values: Vec<f64>,
    xs: Vec<f64>,
    ses: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let ses = ses.unwrap_or_else(|| vec![0.0; lambdas.len()]);
    to_py(py, &estimators::legendre_transform_values(&lambdas, &values, &ses, &xs).map_err(err)?)
}

/// The centered Busemann cocycle and its martingale.
#[pyclass(frozen, name = "Cocycle", module = "hyperwalk")]
struct PyCocycle {
    inner: DriftCocycle,
}

#[pymethods]
impl PyCocycle {
    /// Solves the centering equation on the measure's boundary grid.
    #[staticmethod]
    #[pyo3(signature = (measure, seed = 0, workers = 1))]
    fn solve(measure: &PyMeasure, seed: u64, workers: usize) -> PyResult<Self> {
        Ok(PyCocycle {
            inner: DriftCocycle::solve(&measure.inner, seed, workers).map_err(err)?,
        })
    }

    #[getter]
    fn ell(&self) -> f64 {
        self.inner.ell()
    }

    #[getter]
    fn sup_norm(&self) -> f64 {
        self.inner.solution.sup_norm
    }

    #[getter]
    fn oscillation(&self) -> f64 {
        self.inner.solution.oscillation
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.solution.residual
    }

    #[getter]
    fn v_mu(&self) -> f64 {
        self.inner.v_mu()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `ψ` on every grid node.
    fn psi(&self) -> Vec<f64> {
        self.inner.solution.psi.clone()
    }

    /// `φ` on every grid node.
    fn phi(&self) -> Vec<f64> {
        self.inner.phi_values().to_vec()
    }

    /// `Σ π̃ φ` over the grid's stationary weights.
    fn sigma_sq(&self) -> f64 {
        let s = &self.inner.solution.stationary;
        s.iter().zip(self.inner.phi_values()).map(|(p, f)| p * f).sum()
    }

    fn labels(&self) -> Vec<String> {
        (0..self.inner.len()).map(|i| self.inner.grid().label(i)).collect()
    }

    /// Martingale, brackets and `G^a` along given atom indices.
    #[pyo3(signature = (atoms, x = "a^inf", a_values = vec![1.0]))]
    fn trace<'py>(&self, py: Python<'py>, atoms: Vec<usize>, x: &str, a_values: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let x = self.target(x)?;
        if let Some(&bad) = atoms.iter().find(|&&i| i >= self.inner.measure.len()) {
            return Err(PyValueError::new_err(format!("atom index {bad} out of range")));
        }
        to_py(py, &martingale::martingale_trace(&self.inner, &atoms, &x, &a_values).map_err(err)?)
    }

    /// Pathwise centering and difference bounds over simulated paths.
    #[pyo3(signature = (n, paths, x = "a^inf", a = 1.0, seed = 0, workers = 1))]
    #[allow(clippy::too_many_arguments)]
    fn pathwise<'py>(
        &self,
        py: Python<'py>,
        n: usize,
        paths: usize,
        x: &str,
        a: f64,
        seed: u64,
        workers: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let x = self.target(x)?;
        to_py(py, &martingale::pathwise_sweep(&self.inner, &x, n, paths, a, seed, workers).map_err(err)?)
    }

    /// Occupation-measure estimate of `σ²`.
    #[pyo3(signature = (n, burn_in, paths, x = "a^inf", seed = 0, workers = 1))]
    #[allow(clippy::too_many_arguments)]
    fn occupation<'py>(
        &self,
        py: Python<'py>,
        n: usize,
        burn_in: usize,
        paths: usize,
        x: &str,
        seed: u64,
        workers: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let x = self.target(x)?;
        let r = martingale::sigma_sq_occupation(&self.inner, &x, n, burn_in, paths, seed, workers).map_err(err)?;
        to_py(py, &r)
    }

    /// One-step and Monte Carlo checks of the exponential submartingale.
    #[pyo3(signature = (lam, a, n_max, paths, x = "a^inf", lambda_max = 0.25, seed = 0, workers = 1))]
    #[allow(clippy::too_many_arguments)]
    fn submartingale<'py>(
        &self,
        py: Python<'py>,
        lam: f64,
        a: f64,
        n_max: usize,
        paths: usize,
        x: &str,
        lambda_max: f64,
        seed: u64,
        workers: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let x = self.target(x)?;
        let r = martingale::submartingale_transform_check(&self.inner, &x, lam, a, lambda_max, n_max, paths, seed, workers)
            .map_err(err)?;
        to_py(py, &r)
    }

    /// Tail probabilities of the bracket around `n·σ²`.
    #[pyo3(signature = (eps, ns, paths, x = "a^inf", seed = 0, workers = 1))]
    #[allow(clippy::too_many_arguments)]
    fn qv_ldp<'py>(
        &self,
        py: Python<'py>,
        eps: f64,
        ns: Vec<usize>,
        paths: usize,
        x: &str,
        seed: u64,
        workers: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let x = self.target(x)?;
        let s = self.sigma_sq();
        to_py(py, &estimators::qv_ldp_probe(&self.inner, &x, s, eps, &ns, paths, seed, workers).map_err(err)?)
    }

    /// Empirical tails of the martingale against the Azuma bound.
    #[pyo3(signature = (ns, epss, paths, x = "a^inf", seed = 0, workers = 1))]
    #[allow(clippy::too_many_arguments)]
    fn azuma<'py>(
        &self,
        py: Python<'py>,
        ns: Vec<usize>,
        epss: Vec<f64>,
        paths: usize,
        x: &str,
        seed: u64,
        workers: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let x = self.target(x)?;
        let r = estimators::azuma_check_cocycle(&self.inner, &x, &ns, &epss, paths, seed, workers).map_err(err)?;
        to_py(py, &r)
    }

    /// Conditional moment-generating bound and its certified `|λ|` range.
    #[pyo3(signature = (eps, lambdas))]
    fn mgf_bound<'py>(&self, py: Python<'py>, eps: f64, lambdas: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &martingale::conditional_mgf_bound_check(&self.inner, eps, &lambdas))
    }

    /// Laplace control of `σ(L_n, x) − nℓ`; exact when `paths` is None.
    #[pyo3(signature = (eps, lambdas, ns, b_hat, x = "a^inf", paths = None, seed = 0, workers = 1))]
    #[allow(clippy::too_many_arguments)]
    fn laplace_control<'py>(
        &self,
        py: Python<'py>,
        eps: f64,
        lambdas: Vec<f64>,
        ns: Vec<usize>,
        b_hat: f64,
        x: &str,
        paths: Option<usize>,
        seed: u64,
        workers: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let x = self.target(x)?;
        let budget = paths.map(|p| (p, seed, workers));
        let r = estimators::laplace_control_check(&self.inner, &x, eps, &lambdas, &ns, b_hat, budget).map_err(err)?;
        to_py(py, &r)
    }
}

impl PyCocycle {
    fn target(&self, x: &str) -> PyResult<BoundaryTarget> {
        self.inner.model().parse_target(x).map_err(err)
    }
}

/// `𝔣(λ) = e^{−λ} − 1 + λ`.
#[pyfunction]
fn freedman_f(lam: f64) -> f64 {
    inequality::freedman_f(lam)
}

fn law(values: Vec<f64>, probs: Vec<f64>) -> PyResult<inequality::DiscreteDistribution> {
    if values.len() != probs.len() {
        return Err(PyValueError::new_err("values and probs differ in length"));
    }
    inequality::DiscreteDistribution::new(values.into_iter().zip(probs).collect()).map_err(err)
}

/// Margin of the transform inequality for `E[X] ≥ 0`.
#[pyfunction]
fn scalar_inequality<'py>(py: Python<'py>, values: Vec<f64>, probs: Vec<f64>, lam: f64, a: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &inequality::scalar_inequality_check(&law(values, probs)?, lam, a).map_err(err)?)
}

/// Margin of the Freedman base inequality for `E[X] = 0`, `X ≥ −1`.
#[pyfunction]
fn freedman_base<'py>(py: Python<'py>, values: Vec<f64>, probs: Vec<f64>, lam: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &inequality::freedman_base_check(&law(values, probs)?, lam).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (cases, seed = 0, workers = 1, tol = 1e-9))]
fn fuzz_scalar<'py>(py: Python<'py>, cases: usize, seed: u64, workers: usize, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &inequality::fuzz_scalar_inequality(cases, seed, workers, tol))
}

#[pyfunction]
#[pyo3(signature = (cases, seed = 0, workers = 1, tol = 1e-9))]
fn fuzz_base<'py>(py: Python<'py>, cases: usize, seed: u64, workers: usize, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &inequality::fuzz_freedman_base(cases, seed, workers, tol))
}

/// `2·exp(−nε²/(8‖ξ‖∞²))`.
#[pyfunction]
fn azuma_bound(n: usize, eps: f64, sup_norm: f64) -> f64 {
    estimators::azuma_bound(n, eps, sup_norm)
}

/// `v(μ^{*k})/k` on a depth-`depth` grid.
#[pyfunction]
fn accelerated_variance<'py>(py: Python<'py>, measure: &PyMeasure, k: usize, depth: usize, ell: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &martingale::accelerated_variance(&measure.inner, k, depth, ell).map_err(err)?)
}

/// Runs pipeline stages and returns the report; `config` is TOML text.
#[pyfunction]
#[pyo3(signature = (config = None, preset = None, workers = 1, stages = None))]
fn run<'py>(
    py: Python<'py>,
    config: Option<&str>,
    preset: Option<&str>,
    workers: usize,
    stages: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let config_err = |e: hyperwalk::harness::ConfigError| PyValueError::new_err(e.to_string());
    let mut cfg = match (config, preset) {
        (Some(text), None) => ExperimentConfig::from_toml(text).map_err(config_err)?,
        (None, Some(name)) => ExperimentConfig::preset(name).map_err(config_err)?,
        (None, None) => ExperimentConfig::default(),
        (Some(_), Some(_)) => return Err(PyValueError::new_err("give config or preset, not both")),
    };
    cfg.workers = workers;
    let resolved = cfg.resolve().map_err(config_err)?;
    let chosen = match stages {
        None => Stage::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| {
                Stage::ALL
                    .iter()
                    .copied()
                    .find(|s| s.name() == n)
                    .ok_or_else(|| PyValueError::new_err(format!("unknown stage {n:?}")))
            })
            .collect::<PyResult<_>>()?,
    };
    let out = run_stages(&resolved, &chosen).map_err(|f| PyRuntimeError::new_err(f.to_string()))?;
    to_py(py, &out.report)
}

#[pymodule(name = "hyperwalk")]
mod hyperwalk_py {
    #[pymodule_export]
    use super::{
        accelerated_variance, azuma_bound, freedman_base, freedman_f, fuzz_base, fuzz_scalar, legendre, run,
        sample_path, scalar_inequality, PyCocycle, PyLaplace, PyMeasure,
    };

    #[pymodule_init]
    fn init(m: &pyo3::Bound<'_, pyo3::types::PyModule>) -> pyo3::PyResult<()> {
        use pyo3::types::PyModuleMethods;
        m.add("__version__", env!("CARGO_PKG_VERSION"))
    }
}
