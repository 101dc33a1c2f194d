//! Python bindings: problem construction and validation, value iteration,
//! gain synthesis, the brute-force oracle, simulation and DC networks.

use ndarray::{Array1, Array2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use posminimax::bellman::{self, IterationOptions};
use posminimax::dcnet::{self, DcNetwork, DesignFile, StepBound};
use posminimax::model::{self, ProblemInstance, ProblemParts};
use posminimax::oracle::{self, OracleLimits};
use posminimax::simulate::{self as rollout, DisturbancePolicy};
use posminimax::GainMatrix;

fn value_error(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn matrix(name: &str, rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{name} is ragged")));
    }
    Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect())
        .map_err(value_error)
}

fn to_rows(m: ndarray::ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

/// A problem instance; matrices are lists of rows.
#[pyclass(frozen, name = "Problem")]
struct Problem {
    inner: ProblemInstance,
}

#[pymethods]
impl Problem {
    #[new]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (a, b, f, e, g, s, r, gamma))]
    fn new(
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        f: Vec<Vec<f64>>,
        e: Vec<Vec<f64>>,
        g: Vec<Vec<f64>>,
        s: Vec<f64>,
        r: Vec<f64>,
        gamma: Vec<f64>,
    ) -> PyResult<Self> {
        let inner = ProblemInstance::new(ProblemParts {
            a: matrix("A", a)?,
            b: matrix("B", b)?,
            f: matrix("F", f)?,
            e: matrix("E", e)?,
            g: matrix("G", g)?,
            s: Array1::from(s),
            r: Array1::from(r),
            gamma: Array1::from(gamma),
        })
        .map_err(value_error)?;
        Ok(Problem { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = model::load_problem(text).map_err(value_error)?;
        Ok(Problem { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn l(&self) -> usize {
        self.inner.l()
    }

    /// Returns a dict with `positivity_ok`, `cost_ok`, `valid` and the list
    /// of violations as `(condition, row, col, margin)` tuples.
    #[pyo3(signature = (slack = 0.0))]
    fn validate<'py>(&self, py: Python<'py>, slack: f64) -> PyResult<Bound<'py, PyDict>> {
        let report = model::validate_with_slack(&self.inner, slack);
        let out = PyDict::new(py);
        out.set_item("positivity_ok", report.positivity_ok)?;
        out.set_item("cost_ok", report.cost_ok)?;
        out.set_item("valid", report.is_valid())?;
        let violations: Vec<(String, usize, usize, f64)> = report
            .violations
            .iter()
            .map(|v| (format!("{:?}", v.condition).to_lowercase(), v.row, v.col, v.margin))
            .collect();
        out.set_item("violations", violations)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(n={}, m={}, l={})",
            self.inner.n(),
            self.inner.m(),
            self.inner.l()
        )
    }
}

#[pyfunction]
fn bellman_step(problem: PyRef<'_, Problem>, p: Vec<f64>) -> PyResult<Vec<f64>> {
    bellman::bellman_step(Array1::from(p).view(), &problem.inner)
        .map(|v| v.to_vec())
        .map_err(value_error)
}

#[pyfunction]
fn bellman_residual(problem: PyRef<'_, Problem>, p: Vec<f64>) -> PyResult<Vec<f64>> {
    bellman::bellman_residual(Array1::from(p).view(), &problem.inner)
        .map(|v| v.to_vec())
        .map_err(value_error)
}

/// Value iteration from zero; returns `status`, `p`, `iterations` and
/// `step_change`.
#[pyfunction]
#[pyo3(signature = (problem, tol = 1e-10, max_iter = 100_000, cap = 1e12))]
fn value_iterate<'py>(
    py: Python<'py>,
    problem: PyRef<'_, Problem>,
    tol: f64,
    max_iter: usize,
    cap: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = IterationOptions {
        tol,
        max_iter,
        cap,
        record_history: false,
    };
    let res = bellman::value_iterate(&problem.inner, &opts).map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("status", res.status.to_string())?;
    out.set_item("p", res.value.p.to_vec())?;
    out.set_item("iterations", res.value.iterations)?;
    out.set_item("step_change", res.value.residual_inf_norm)?;
    Ok(out)
}

#[pyfunction]
fn synthesize_gain(problem: PyRef<'_, Problem>, p: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let k = bellman::synthesize_gain(Array1::from(p).view(), &problem.inner).map_err(value_error)?;
    Ok(to_rows(k.matrix()))
}

#[pyfunction]
fn adversary_gain(problem: PyRef<'_, Problem>, p: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let l = bellman::adversary_gain(Array1::from(p).view(), &problem.inner).map_err(value_error)?;
    Ok(to_rows(l.matrix()))
}

#[pyfunction]
fn optimal_cost(p: Vec<f64>, x0: Vec<f64>) -> PyResult<f64> {
    bellman::optimal_cost(Array1::from(p).view(), Array1::from(x0).view()).map_err(value_error)
}

/// Brute-force `J_k(x)`.
#[pyfunction]
fn finite_horizon_dp(problem: PyRef<'_, Problem>, horizon: usize, x: Vec<f64>) -> PyResult<f64> {
    oracle::finite_horizon_dp(
        &problem.inner,
        horizon,
        Array1::from(x).view(),
        &OracleLimits::default(),
    )
    .map(|r| r.value)
    .map_err(value_error)
}

/// Closed-loop rollout under `u = -Kx`. `policy` is `"worst"` (needs
/// `l_gain`), `"zero"` or `"random"` (needs `seed`).
#[pyfunction]
#[pyo3(signature = (problem, k_gain, policy, x0, horizon, l_gain = None, seed = None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    problem: PyRef<'_, Problem>,
    k_gain: Vec<Vec<f64>>,
    policy: &str,
    x0: Vec<f64>,
    horizon: usize,
    l_gain: Option<Vec<Vec<f64>>>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let policy = match (policy, l_gain, seed) {
        ("worst", Some(l), _) => DisturbancePolicy::WorstCase(GainMatrix::from_matrix(matrix("L", l)?)),
        ("worst", None, _) => return Err(PyValueError::new_err("policy 'worst' needs l_gain")),
        ("zero", _, _) => DisturbancePolicy::Zero,
        ("random", _, Some(seed)) => DisturbancePolicy::RandomAdmissible { seed },
        ("random", _, None) => return Err(PyValueError::new_err("policy 'random' needs seed")),
        (other, _, _) => return Err(PyValueError::new_err(format!("unknown policy {other:?}"))),
    };
    let k = GainMatrix::from_matrix(matrix("K", k_gain)?);
    let traj = rollout::simulate(&problem.inner, &k, policy, Array1::from(x0).view(), horizon)
        .map_err(value_error)?;
    let vecs = |v: &[Array1<f64>]| v.iter().map(|a| a.to_vec()).collect::<Vec<_>>();
    let out = PyDict::new(py);
    out.set_item("states", vecs(&traj.states))?;
    out.set_item("inputs", vecs(&traj.inputs))?;
    out.set_item("disturbances", vecs(&traj.disturbances))?;
    out.set_item("stage_costs", traj.stage_costs.clone())?;
    out.set_item("accumulated_cost", rollout::accumulated_cost(&traj))?;
    out.set_item("csv", traj.to_csv())?;
    Ok(out)
}

#[pyfunction]
fn laplacian(network_json: &str) -> PyResult<Vec<Vec<f64>>> {
    let net = DcNetwork::from_json(network_json).map_err(value_error)?;
    Ok(to_rows(dcnet::build_laplacian(&net).view()))
}

/// Largest feasible step, or `None` when unbounded. `design_json` may carry
/// `E` and `G` (zero when absent).
#[pyfunction]
#[pyo3(signature = (network_json, design_json = "{}"))]
fn max_step_size(network_json: &str, design_json: &str) -> PyResult<Option<f64>> {
    let net = DcNetwork::from_json(network_json).map_err(value_error)?;
    let design = DesignFile::from_json(design_json).map_err(value_error)?;
    let (e, g) = design.constraints(net.n()).map_err(value_error)?;
    match dcnet::max_step_size(&net, e.view(), g.view()).map_err(value_error)? {
        StepBound::Bounded { h_max, .. } => Ok(Some(h_max)),
        StepBound::Unbounded => Ok(None),
    }
}

/// Discretizes the network at step `h` and returns the validated problem.
#[pyfunction]
fn assemble_problem(network_json: &str, h: f64, design_json: &str) -> PyResult<Problem> {
    let net = DcNetwork::from_json(network_json).map_err(value_error)?;
    let design = DesignFile::from_json(design_json)
        .and_then(|d| d.design(net.n()))
        .map_err(value_error)?;
    let inner = dcnet::assemble_problem(&net, h, &design).map_err(value_error)?;
    Ok(Problem { inner })
}

#[pymodule]
#[pyo3(name = "posminimax")]
fn posminimax_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(bellman_step, m)?)?;
    m.add_function(wrap_pyfunction!(bellman_residual, m)?)?;
    m.add_function(wrap_pyfunction!(value_iterate, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_gain, m)?)?;
    m.add_function(wrap_pyfunction!(adversary_gain, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_cost, m)?)?;
    m.add_function(wrap_pyfunction!(finite_horizon_dp, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(laplacian, m)?)?;
    m.add_function(wrap_pyfunction!(max_step_size, m)?)?;
    m.add_function(wrap_pyfunction!(assemble_problem, m)?)?;
    Ok(())
}
