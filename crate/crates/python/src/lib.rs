//! Python bindings for the weighted Hardy quotient laboratory.
//!
//! Results come back as plain dicts and lists.
//!
//! ```python
//! import hardy_lab
//! s = hardy_lab.Scenario.flat_slab(3, 1, 0.1)
//! w = hardy_lab.Weights()
//! problem = hardy_lab.Problem(s, w, n=16)
//! problem.solve(0.0)["mu"]
//! ```

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde_json::Value;

use hardy_core::constructions;
use hardy_core::discretization::GradedGrid;
use hardy_core::geometry;
use hardy_core::solver::{self, QuotientOperators, SolverOptions};
use hardy_core::weights::{self, WeightTriple};
use hardy_core::HardyError;

fn err(e: HardyError) -> PyErr {
    match e {
        HardyError::Config { .. }
        | HardyError::Expr(_)
        | HardyError::InvalidScenario(_)
        | HardyError::HypothesisViolated { .. }
        | HardyError::InvalidGrid(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_bound_py_any(py)?,
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_bound_py_any(py)?,
            (None, Some(f)) => f.into_bound_py_any(py)?,
            _ => py.None().into_bound(py),
        },
        Value::String(s) => s.into_bound_py_any(py)?,
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn serialized<'py, T: serde::Serialize>(py: Python<'py>, t: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(t).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

fn options(tol: f64) -> SolverOptions {
    SolverOptions {
        tol,
        ..SolverOptions::default()
    }
}

/// Domain and singular submanifold.
#[pyclass(name = "Scenario", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: geometry::Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn flat_slab(dim: usize, sub_dim: usize, beta: f64) -> PyResult<Self> {
        let inner = geometry::Scenario::flat_slab(dim, sub_dim, beta).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn ball_equator(beta: f64) -> PyResult<Self> {
        let inner = geometry::Scenario::ball_equator(beta).map_err(err)?;
        Ok(Self { inner })
    }

    /// Circle at latitude `theta0` on the unit sphere.
    #[staticmethod]
    fn latitude_circle(theta0: f64, beta: f64) -> PyResult<Self> {
        let curve = std::sync::Arc::new(geometry::LatitudeCircle { theta0 });
        let inner = geometry::Scenario::curve_on_sphere(curve, beta).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn tilted_great_circle(tilt: f64, beta: f64) -> PyResult<Self> {
        let curve = std::sync::Arc::new(geometry::TiltedGreatCircle { tilt });
        let inner = geometry::Scenario::curve_on_sphere(curve, beta).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn sub_dim(&self) -> usize {
        self.inner.sub_dim()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta()
    }

    /// `(N - k)^2 / 4`.
    #[getter]
    fn plateau(&self) -> f64 {
        self.inner.plateau()
    }

    #[getter]
    fn sigma_measure(&self) -> f64 {
        self.inner.sigma_measure()
    }

    fn contains(&self, x: Vec<f64>) -> PyResult<bool> {
        self.check_point(&x)?;
        Ok(self.inner.contains(&x))
    }

    /// `d`, `delta`, `delta_hat`, `delta_tilde` and `psi` at `x`.
    fn distances<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        self.check_point(&x)?;
        let d = self.inner.distances(&x);
        let out = PyDict::new(py);
        out.set_item("d", d.d)?;
        out.set_item("delta", d.delta)?;
        out.set_item("delta_hat", d.delta_hat)?;
        out.set_item("delta_tilde", d.delta_tilde)?;
        out.set_item("psi", d.psi)?;
        Ok(out.into_any())
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

impl PyScenario {
    fn check_point(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.inner.dim() {
            return Err(PyValueError::new_err(format!(
                "expected {} coordinates, got {}",
                self.inner.dim(),
                x.len()
            )));
        }
        Ok(())
    }
}

/// Weight triple `(p, q, eta)` given as expressions.
#[pyclass(name = "Weights", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyWeights {
    inner: WeightTriple,
    source: [String; 3],
}

#[pymethods]
impl PyWeights {
    #[new]
    #[pyo3(signature = (p="1", q="1", eta="delta^2"))]
    fn new(p: &str, q: &str, eta: &str) -> PyResult<Self> {
        let inner = WeightTriple::parse(p, q, eta).map_err(err)?;
        Ok(Self {
            inner,
            source: [p.into(), q.into(), eta.into()],
        })
    }

    fn __repr__(&self) -> String {
        let [p, q, eta] = &self.source;
        format!("Weights(p={p:?}, q={q:?}, eta={eta:?})")
    }
}

/// Discrete quotient on one graded grid.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    ops: QuotientOperators,
    plateau: f64,
}

#[pymethods]
impl PyProblem {
    /// Raises `ValueError` when the weights violate the hypotheses.
    #[new]
    #[pyo3(signature = (scenario, weights, n=32, gamma=2.0))]
    fn new(py: Python<'_>, scenario: &PyScenario, weights: &PyWeights, n: usize, gamma: f64) -> PyResult<Self> {
        let s = scenario.inner.clone();
        let w = weights.inner.clone();
        weights::validate_weights(&w, &s, 4096).map_err(err)?;
        let ops = py
            .detach(|| GradedGrid::build(&s, n, gamma).and_then(|g| QuotientOperators::assemble(&g, &w)))
            .map_err(err)?;
        Ok(Self {
            ops,
            plateau: s.plateau(),
        })
    }

    #[getter]
    fn unknowns(&self) -> usize {
        self.ops.dim()
    }

    #[getter]
    fn signature(&self) -> &str {
        &self.ops.signature
    }

    #[getter]
    fn plateau(&self) -> f64 {
        self.plateau
    }

    /// Smallest `mu` at `lam`. The eigenvector is included when
    /// `eigvec=True`.
    #[pyo3(signature = (lam, tol=1e-8, eigvec=false))]
    fn solve<'py>(&self, py: Python<'py>, lam: f64, tol: f64, eigvec: bool) -> PyResult<Bound<'py, PyAny>> {
        let r = py.detach(|| solver::min_rayleigh(&self.ops, lam, &options(tol), None)).map_err(err)?;
        let out = serialized(py, &r)?;
        if eigvec {
            out.set_item("eigvec", r.eigvec)?;
        }
        Ok(out)
    }

    /// Warm-started curve over sorted `lambdas`.
    #[pyo3(signature = (lambdas, tol=1e-8))]
    fn curve<'py>(&self, py: Python<'py>, lambdas: Vec<f64>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
        let c = py.detach(|| solver::mu_curve(&self.ops, &lambdas, &options(tol))).map_err(err)?;
        serialized(py, &c)
    }
}

/// Bracket of the threshold from a coarse and a fine grid.
#[pyfunction]
#[pyo3(signature = (scenario, weights, coarse=32, fine=64, width=0.5, gamma=2.0, tol=1e-8))]
#[allow(clippy::too_many_arguments)]
fn find_threshold<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    weights: &PyWeights,
    coarse: usize,
    fine: usize,
    width: f64,
    gamma: f64,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let s = &scenario.inner;
    let w = &weights.inner;
    weights::validate_weights(w, s, 4096).map_err(err)?;
    let t = py
        .detach(|| {
            let c = QuotientOperators::assemble(&GradedGrid::build(s, coarse, gamma)?, w)?;
            let f = QuotientOperators::assemble(&GradedGrid::build(s, fine, gamma)?, w)?;
            solver::find_threshold(&c, &f, s.plateau(), width, &options(tol))
        })
        .map_err(err)?;
    to_py(py, &t.to_json())
}

/// Discrete constant of the improved local inequality on the collar.
#[pyfunction]
#[pyo3(signature = (scenario, weights, beta, n=32, gamma=2.0))]
fn local_hardy<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    weights: &PyWeights,
    beta: f64,
    n: usize,
    gamma: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let r = py
        .detach(|| solver::local_hardy_check(&scenario.inner, &weights.inner, beta, n, gamma, &SolverOptions::default()))
        .map_err(err)?;
    serialized(py, &r)
}

/// Boundary integral deciding whether the threshold value is attained.
#[pyfunction]
#[pyo3(signature = (scenario, weights, tol=1e-10))]
fn attainment_integral<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    weights: &PyWeights,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let r = weights::attainment_integral(&weights.inner, &scenario.inner, tol).map_err(err)?;
    to_py(py, &r.to_json())
}

/// Hypothesis report; never raises on violations.
#[pyfunction]
#[pyo3(signature = (scenario, weights, samples=4096, seed=0))]
fn inspect_weights<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    weights: &PyWeights,
    samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let r = weights::inspect_weights(&weights.inner, &scenario.inner, samples, seed);
    serialized(py, &r)
}

/// Sign sweep of the subsolution (`kind="sub"`) or supersolution
/// (`kind="super"`) on the collar of radius `beta`.
#[pyfunction]
#[pyo3(signature = (scenario, weights, kind, beta, lam=1.0, eps=0.0, samples=10000, seed=1))]
#[allow(clippy::too_many_arguments)]
fn sign_sweep<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    weights: &PyWeights,
    kind: &str,
    beta: f64,
    lam: f64,
    eps: f64,
    samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let (s, w) = (&scenario.inner, &weights.inner);
    let r = match kind {
        "sub" => constructions::check_subsolution(s, w, lam, eps, beta, samples, seed),
        "super" => constructions::check_supersolution(s, w, lam, beta, samples, seed),
        _ => return Err(PyValueError::new_err(format!("kind must be 'sub' or 'super', got {kind:?}"))),
    }
    .map_err(err)?;
    to_py(py, &r.to_json())
}

/// Largest collar radius, halving from 0.1, at which every sweep passes.
#[pyfunction]
#[pyo3(signature = (scenario, weights, lam=1.0, eps=vec![0.0, 0.5], samples=10000, seed=1))]
fn certify_beta<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    weights: &PyWeights,
    lam: f64,
    eps: Vec<f64>,
    samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let c = constructions::certify_beta(&scenario.inner, &weights.inner, lam, &eps, samples, seed).map_err(err)?;
    serialized(py, &c)
}

/// Runs the `hardy` command line with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<std::ffi::OsString> = std::iter::once("hardy".to_string()).chain(args).map(Into::into).collect();
    py.detach(|| hardy_core::cli::run(argv))
}

#[pymodule]
fn hardy_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyWeights>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(find_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(local_hardy, m)?)?;
    m.add_function(wrap_pyfunction!(attainment_integral, m)?)?;
    m.add_function(wrap_pyfunction!(inspect_weights, m)?)?;
    m.add_function(wrap_pyfunction!(sign_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(certify_beta, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
