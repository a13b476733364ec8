//! Python bindings: scenario runs, direct controller runs on the built-in
//! plants, and the individual numerical building blocks.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ofo_core::harness::{matrix_from_rows, run_scenario as harness_run, RunOptions, ScenarioConfig};
use ofo_core::model::{AdaptationMode, ConstraintSet, OfoParams, Plant, ScalingSensitivity};
use ofo_core::plants::{cstr_plant, gaslift_plant, rosenbrock_plant, toy_plant, CstrParams, GasLiftSurrogate, Reference};
use ofo_core::qp::{solve_w, QpData, KKT_TOL};
use ofo_core::{OfoError, RunTrace};

fn py_err(e: OfoError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    matrix_from_rows(&rows).map_err(py_err)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn columns(v: impl Iterator<Item = DVector<f64>>) -> Vec<Vec<f64>> {
    v.map(|x| x.iter().copied().collect()).collect()
}

fn trace_dict<'py>(py: Python<'py>, trace: &RunTrace) -> PyResult<Bound<'py, PyDict>> {
    let r = &trace.records;
    let d = PyDict::new(py);
    d.set_item("plant", &trace.plant_id)?;
    d.set_item("k", r.iter().map(|x| x.k).collect::<Vec<_>>())?;
    d.set_item("u", columns(r.iter().map(|x| x.u.clone())))?;
    d.set_item("y", columns(r.iter().map(|x| x.y.clone())))?;
    d.set_item("phi", r.iter().map(|x| x.phi).collect::<Vec<_>>())?;
    d.set_item("alpha", r.iter().map(|x| x.alpha).collect::<Vec<_>>())?;
    d.set_item("w", columns(r.iter().map(|x| x.w.clone())))?;
    d.set_item("s_eigs", columns(r.iter().map(|x| x.s_eigs.clone())))?;
    d.set_item("s_diag", columns(r.iter().map(|x| x.s_diag.clone())))?;
    d.set_item("d_fro", r.iter().map(|x| x.d_norm).collect::<Vec<_>>())?;
    d.set_item("active", r.iter().map(|x| x.active_constraints.clone()).collect::<Vec<_>>())?;
    d.set_item("adapted", r.iter().map(|x| x.adapted).collect::<Vec<_>>())?;
    d.set_item("termination", format!("{:?}", trace.termination))?;
    Ok(d)
}

/// Runs a scenario file the way `ofo run` does and returns the summary rows
/// together with every trace.
#[pyfunction]
#[pyo3(signature = (path, mode=None, out=None, iters=None))]
fn run_scenario<'py>(
    py: Python<'py>,
    path: PathBuf,
    mode: Option<String>,
    out: Option<PathBuf>,
    iters: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ScenarioConfig::load(&path).map_err(py_err)?;
    let opts = RunOptions { dry_run: out.is_none(), out_dir: out, n_iters: iters };
    let summary = harness_run(&cfg, mode.as_deref(), &opts).map_err(py_err)?;
    let result = PyDict::new(py);
    let runs = PyDict::new(py);
    for (row, outcome) in summary.rows.iter().zip(&summary.outcomes) {
        let d = trace_dict(py, &outcome.trace)?;
        d.set_item("mode", row.mode.as_str())?;
        d.set_item("step_adaptation", row.step_adaptation)?;
        d.set_item("iters_to_tol", row.iters_to_tol)?;
        d.set_item("increases", row.increases)?;
        d.set_item("epsilon", row.epsilon)?;
        d.set_item("ratio", row.ratio)?;
        runs.set_item(&row.name, d)?;
    }
    result.set_item("scenario", &summary.scenario)?;
    result.set_item("runs", runs)?;
    Ok(result)
}

/// Runs the controller on a built-in plant: `toy`, `rosenbrock`, `gaslift`
/// or `cstr` (the latter tracking a constant setpoint `reference`).
#[pyfunction]
#[pyo3(signature = (plant, u0, s0, alpha_max, t_max, n_iters, mode="fixed", step_adaptation=false, p_max=1.0, reference=1.08))]
#[allow(clippy::too_many_arguments)]
fn run_plant<'py>(
    py: Python<'py>,
    plant: &str,
    u0: Vec<f64>,
    s0: Vec<Vec<f64>>,
    alpha_max: f64,
    t_max: f64,
    n_iters: usize,
    mode: &str,
    step_adaptation: bool,
    p_max: f64,
    reference: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut prm = OfoParams::new(matrix(s0)?, alpha_max, t_max);
    prm.mode = mode.parse::<AdaptationMode>().map_err(py_err)?;
    prm.step_adaptation = step_adaptation;
    prm.p_max = p_max;
    let u0 = DVector::from_vec(u0);
    let go = |p: &mut dyn Plant, cons: &ConstraintSet| ofo_core::run(p, cons, &prm, &u0, n_iters);
    let trace = match plant {
        "toy" => {
            let (mut p, c) = toy_plant();
            go(&mut p, &c)
        }
        "rosenbrock" => {
            let (mut p, c) = rosenbrock_plant();
            go(&mut p, &c)
        }
        "gaslift" => {
            let (mut p, c) = gaslift_plant(GasLiftSurrogate::default()).map_err(py_err)?;
            go(&mut p, &c)
        }
        "cstr" => {
            let (mut p, c) = cstr_plant(CstrParams::default(), Reference::constant(reference)).map_err(py_err)?;
            go(&mut p, &c)
        }
        other => return Err(PyValueError::new_err(format!("unknown plant '{other}'"))),
    }
    .map_err(py_err)?;
    trace_dict(py, &trace)
}

/// Minimizes `1/2 w'Pw + q'w` subject to `Gw <= h`. Returns `(w, active)`.
#[pyfunction]
fn solve_qp(p: Vec<Vec<f64>>, q: Vec<f64>, g: Vec<Vec<f64>>, h: Vec<f64>) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let p = matrix(p)?;
    let n = p.nrows();
    if q.len() != n || g.len() != h.len() || g.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("inconsistent qp dimensions"));
    }
    let g = DMatrix::from_fn(h.len(), n, |i, j| g[i][j]);
    let qp = QpData { p, q: DVector::from_vec(q), n_input_rows: g.nrows(), g, h: DVector::from_vec(h) };
    let sol = solve_w(&qp, KKT_TOL);
    if !sol.is_optimal() {
        return Err(PyValueError::new_err(format!("qp not solved: {:?}", sol.status)));
    }
    Ok((sol.w.iter().copied().collect(), sol.active))
}

/// Metric update for sensitivity `d`. Returns `(delta_s, p, t)`.
#[pyfunction]
#[pyo3(signature = (s, d, t_max, p_max=1.0, t_min=1e-6, diagonal=false))]
fn adapt_metric(s: Vec<Vec<f64>>, d: Vec<Vec<f64>>, t_max: f64, p_max: f64, t_min: f64, diagonal: bool) -> PyResult<(Vec<Vec<f64>>, f64, f64)> {
    let s = matrix(s)?;
    let mut prm = OfoParams::new(s.clone(), 1.0, t_max);
    prm.p_max = p_max;
    prm.t_min = t_min;
    let res = ofo_core::scaling::adapt_sdp(&s, &ScalingSensitivity { d: matrix(d)? }, &prm, diagonal);
    if !res.is_optimal() {
        return Err(PyValueError::new_err(format!("metric update failed: {:?}", res.status)));
    }
    Ok((rows(&res.delta_s), res.p, res.t))
}

/// Step from the quadratic model through `phi(0)`, `phi'(0)` and
/// `phi(alpha_tilde)`, clamped to `[alpha_min, alpha_max]`.
#[pyfunction]
fn adapt_step(phi0: f64, dphi0: f64, phi_at: f64, alpha_tilde: f64, alpha_min: f64, alpha_max: f64) -> PyResult<f64> {
    let model = ofo_core::step::fit_quadratic(phi0, dphi0, phi_at, alpha_tilde).map_err(py_err)?;
    Ok(ofo_core::step::minimize_quadratic(&model, alpha_min, alpha_max))
}

#[pymodule]
fn ofo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_plant, m)?)?;
    m.add_function(wrap_pyfunction!(solve_qp, m)?)?;
    m.add_function(wrap_pyfunction!(adapt_metric, m)?)?;
    m.add_function(wrap_pyfunction!(adapt_step, m)?)?;
    Ok(())
}
