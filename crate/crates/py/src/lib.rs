//! Python bindings for `stefan-core`.
//!
//! Structured results (costs, energy reports, optimizer output, sweeps) are
//! returned as plain dicts; the main data types are wrapped as classes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pythonize::pythonize;
use serde::Serialize;

use stefan_core::analysis::{self, convergence_sweep};
use stefan_core::cli::RunConfig;
use stefan_core::control::{self, norm_w21, norm_w22};
use stefan_core::cost;
use stefan_core::optimize::{self, Method, OptOptions};
use stefan_core::problem::{validate_data, ProblemSpec};
use stefan_core::{fem, state, Signature};

fn core_err(e: stefan_core::Error) -> PyErr {
    match e {
        stefan_core::Error::Invalid(_) | stefan_core::Error::Expr(_) | stefan_core::Error::Mismatch(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    pythonize(py, v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn signature(name: &str) -> PyResult<Signature> {
    match name {
        "x" => Ok(Signature::X),
        "t" => Ok(Signature::T),
        "xt" => Ok(Signature::XT),
        other => Err(PyValueError::new_err(format!("signature must be x, t or xt, got `{other}`"))),
    }
}

/// A parsed scalar expression in `x`, `t` or `(x, t)`.
#[pyclass(name = "FunctionSpec", frozen, from_py_object)]
#[derive(Clone)]
struct PyFunctionSpec(stefan_core::FunctionSpec);

#[pymethods]
impl PyFunctionSpec {
    #[new]
    #[pyo3(signature = (text, signature = "xt"))]
    fn new(text: &str, signature: &str) -> PyResult<Self> {
        stefan_core::FunctionSpec::parse(text, self::signature(signature)?)
            .map(Self)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[pyo3(signature = (x, t = None))]
    fn __call__(&self, x: f64, t: Option<f64>) -> PyResult<f64> {
        self.0.evaluate(x, t).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn source(&self) -> String {
        self.0.source().to_string()
    }

    #[getter]
    fn arity(&self) -> usize {
        self.0.arity()
    }

    fn __repr__(&self) -> String {
        format!("FunctionSpec({:?})", self.0.source())
    }
}

/// Coefficients, data and constants of one problem instance.
#[pyclass(name = "ProblemData", frozen)]
struct PyProblemData(stefan_core::ProblemData);

#[pymethods]
impl PyProblemData {
    /// Accepts either a full run configuration or a bare problem table.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let spec: ProblemSpec = match table.get("problem") {
            Some(p) => p.clone().try_into(),
            None => table.try_into(),
        }
        .map_err(|e| PyValueError::new_err(format!("problem: {e}")))?;
        stefan_core::ProblemData::from_spec(&spec).map(Self).map_err(core_err)
    }

    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    #[getter]
    fn s0(&self) -> f64 {
        self.0.s0
    }

    #[getter]
    fn t_final(&self) -> f64 {
        self.0.t_final
    }

    #[getter]
    fn l(&self) -> f64 {
        self.0.l
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.0.delta
    }

    fn tau(&self, n: usize) -> f64 {
        self.0.tau(n)
    }

    /// Sampled check of the standing assumptions; returns a dict with
    /// `passed` and a list of `violations`.
    #[pyo3(signature = (samples = 64))]
    fn validate<'py>(&self, py: Python<'py>, samples: usize) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &validate_data(&self.0, samples))
    }

    /// `τ₀` for the sampled bound on `|a|, |b|, |c|`.
    #[pyo3(signature = (samples = 64))]
    fn stability_threshold(&self, samples: usize) -> PyResult<f64> {
        let m = self.0.sampled_coefficient_bound(samples).map_err(core_err)?;
        fem::stability_threshold(m, self.0.a0).map_err(core_err)
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.0.to_spec()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Grid values `s_0..s_n`, `g_0..g_n` on a uniform partition of `[0, T]`.
#[pyclass(name = "DiscreteControl", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDiscreteControl(control::DiscreteControl);

#[pymethods]
impl PyDiscreteControl {
    #[new]
    fn new(s: Vec<f64>, g: Vec<f64>, t_final: f64) -> PyResult<Self> {
        control::DiscreteControl::new(s, g, t_final).map(Self).map_err(core_err)
    }

    #[staticmethod]
    fn constant(s0: f64, n: usize, t_final: f64) -> PyResult<Self> {
        control::DiscreteControl::constant(s0, n, t_final).map(Self).map_err(core_err)
    }

    #[getter]
    fn s(&self) -> Vec<f64> {
        self.0.s.clone()
    }

    #[getter]
    fn g(&self) -> Vec<f64> {
        self.0.g.clone()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau()
    }

    fn w22(&self) -> f64 {
        self.0.w22()
    }

    fn w21(&self) -> f64 {
        self.0.w21()
    }

    /// The C¹ interpolating lift.
    fn lift(&self) -> PyResult<PyContinuousControl> {
        control::lift_pn(&self.0).map(PyContinuousControl).map_err(core_err)
    }

    fn __repr__(&self) -> String {
        format!("DiscreteControl(n={}, T={})", self.0.n(), self.0.t_final)
    }
}

/// A boundary/flux pair `(s(t), g(t))` on `[0, T]`.
#[pyclass(name = "ContinuousControl", frozen)]
struct PyContinuousControl(control::ContinuousControl);

#[pymethods]
impl PyContinuousControl {
    #[staticmethod]
    fn analytic(s: &str, g: &str, problem: &PyProblemData) -> PyResult<Self> {
        let parse = |text: &str| {
            stefan_core::FunctionSpec::parse(text, Signature::T).map_err(|e| PyValueError::new_err(e.to_string()))
        };
        control::ContinuousControl::analytic(parse(s)?, parse(g)?, &problem.0)
            .map(Self)
            .map_err(core_err)
    }

    fn s(&self, t: f64) -> PyResult<f64> {
        self.0.s(t).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn g(&self, t: f64) -> PyResult<f64> {
        self.0.g(t).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// `(‖s‖_{W₂²}, ‖g‖_{W₂¹})` on `[0, T]`.
    fn norms(&self) -> PyResult<(f64, f64)> {
        self.0.norms().map_err(core_err)
    }

    /// Grid sampling onto `n` time steps.
    fn sample(&self, n: usize) -> PyResult<PyDiscreteControl> {
        control::sample_qn(&self.0, n).map(PyDiscreteControl).map_err(core_err)
    }
}

/// Nodal FEM solutions for every time slice.
#[pyclass(name = "StateVector", frozen)]
struct PyStateVector(state::DiscreteStateVector);

#[pymethods]
impl PyStateVector {
    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau
    }

    fn boundary(&self, k: usize) -> PyResult<f64> {
        Ok(self.slice(k)?.s_k)
    }

    fn nodes(&self, k: usize) -> PyResult<Vec<f64>> {
        Ok(self.slice(k)?.mesh.nodes().to_vec())
    }

    fn values(&self, k: usize) -> PyResult<Vec<f64>> {
        Ok(self.slice(k)?.nodal.clone())
    }

    /// Slice `k` evaluated on `[0, l]` through the reflection extension.
    fn eval(&self, k: usize, x: f64) -> PyResult<f64> {
        self.slice(k)?;
        self.0.eval_extended(k, x).map_err(core_err)
    }
}

impl PyStateVector {
    fn slice(&self, k: usize) -> PyResult<&state::StateSlice> {
        self.0
            .slices
            .get(k)
            .ok_or_else(|| PyValueError::new_err(format!("slice {k} out of range 0..={}", self.0.n())))
    }
}

#[pyfunction]
fn solve_state(control: &PyDiscreteControl, problem: &PyProblemData, m: usize) -> PyResult<PyStateVector> {
    state::solve_state(&control.0, &problem.0, m).map(PyStateVector).map_err(core_err)
}

#[pyfunction]
fn discrete_cost<'py>(
    py: Python<'py>,
    state: &PyStateVector,
    control: &PyDiscreteControl,
    problem: &PyProblemData,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &cost::discrete_cost(&state.0, &control.0, &problem.0).map_err(core_err)?)
}

#[pyfunction]
fn continuous_cost_estimate<'py>(
    py: Python<'py>,
    control: &PyContinuousControl,
    problem: &PyProblemData,
    n_fine: usize,
    m: usize,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &cost::continuous_cost_estimate(&control.0, &problem.0, n_fine, m).map_err(core_err)?)
}

#[pyfunction]
fn energy_report<'py>(
    py: Python<'py>,
    state: &PyStateVector,
    control: &PyDiscreteControl,
    problem: &PyProblemData,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &analysis::energy_report(&state.0, &control.0, &problem.0).map_err(core_err)?)
}

#[pyfunction]
fn weak_residual(
    state: &PyStateVector,
    control: &PyDiscreteControl,
    problem: &PyProblemData,
    test_fns: Vec<PyFunctionSpec>,
) -> PyResult<Vec<f64>> {
    let fns: Vec<_> = test_fns.into_iter().map(|f| f.0).collect();
    analysis::weak_residual(&state.0, &control.0, &problem.0, &fns).map_err(core_err)
}

#[pyfunction]
fn quarter_norm(h: Vec<f64>, tau: f64) -> PyResult<f64> {
    analysis::quarter_norm(&h, tau).map_err(core_err)
}

#[pyfunction]
fn w22_norm(s: Vec<f64>, tau: f64) -> PyResult<f64> {
    norm_w22(&s, tau).map_err(core_err)
}

#[pyfunction]
fn w21_norm(g: Vec<f64>, tau: f64) -> PyResult<f64> {
    norm_w21(&g, tau).map_err(core_err)
}

#[pyfunction]
fn stability_threshold(m_bound: f64, a0: f64) -> PyResult<f64> {
    fem::stability_threshold(m_bound, a0).map_err(core_err)
}

/// Minimizes the penalized discrete cost from `init`. Returns a dict with
/// `best` (`s`, `g`, `t_final`), `best_cost`, `history`, `converged`, `iters`.
#[pyfunction]
#[pyo3(signature = (
    problem, m, init, *, method = "fd_gradient", max_iters = 200, tol = 1e-10,
    step0 = 1.0, grad_step = 1e-6, penalty_weight = 1e3, seed = 0,
    optimize_s = true, optimize_g = true,
))]
#[allow(clippy::too_many_arguments)]
fn minimize<'py>(
    py: Python<'py>,
    problem: &PyProblemData,
    m: usize,
    init: &PyDiscreteControl,
    method: &str,
    max_iters: usize,
    tol: f64,
    step0: f64,
    grad_step: f64,
    penalty_weight: f64,
    seed: u64,
    optimize_s: bool,
    optimize_g: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = OptOptions {
        max_iters,
        grad_step,
        step0,
        tol,
        penalty_weight,
        method: method.parse::<Method>().map_err(PyValueError::new_err)?,
        seed,
        optimize_s,
        optimize_g,
    };
    let (pd, init) = (&problem.0, &init.0);
    let result = py
        .detach(|| optimize::minimize(pd, init.n(), m, init, &opts))
        .map_err(core_err)?;
    to_py(py, &result)
}

/// Runs the sweep for strictly increasing `n_list` with `m = max(m_per_n·n, 2)`.
/// Returns `{"rows": [...], "failures": [...]}`.
#[pyfunction]
#[pyo3(signature = (problem, truth, n_list, m_per_n = 4))]
fn sweep<'py>(
    py: Python<'py>,
    problem: &PyProblemData,
    truth: &PyContinuousControl,
    n_list: Vec<usize>,
    m_per_n: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let (pd, truth) = (&problem.0, &truth.0);
    let table = py
        .detach(|| convergence_sweep(pd, truth, &n_list, &|n| (m_per_n * n).max(2)))
        .map_err(core_err)?;
    to_py(py, &table)
}

/// Parses and checks a full run configuration, returning it re-serialized.
#[pyfunction]
fn normalize_config(text: &str) -> PyResult<String> {
    let cfg = RunConfig::from_toml_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(cfg.to_toml_string())
}

#[pymodule]
fn stefan_mol(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFunctionSpec>()?;
    m.add_class::<PyProblemData>()?;
    m.add_class::<PyDiscreteControl>()?;
    m.add_class::<PyContinuousControl>()?;
    m.add_class::<PyStateVector>()?;
    m.add_function(wrap_pyfunction!(solve_state, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_cost, m)?)?;
    m.add_function(wrap_pyfunction!(continuous_cost_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(energy_report, m)?)?;
    m.add_function(wrap_pyfunction!(weak_residual, m)?)?;
    m.add_function(wrap_pyfunction!(quarter_norm, m)?)?;
    m.add_function(wrap_pyfunction!(w22_norm, m)?)?;
    m.add_function(wrap_pyfunction!(w21_norm, m)?)?;
    m.add_function(wrap_pyfunction!(stability_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(minimize, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_config, m)?)?;
    Ok(())
}
