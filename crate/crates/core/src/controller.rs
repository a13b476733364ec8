//! The closed-loop OFO iteration with adaptive tuning.
//!
//! One iteration, in order:
//!
//! 1. if the last direction was a descent direction at the new iterate
//!    (`grad . w_prev < 0`) and a sensitivity is available, adapt `S`;
//! 2. solve the direction QP with the (possibly new) `S`;
//! 3. pick the step, either fixed at `alpha0` or from the quadratic model;
//! 4. apply `u + alpha w` and measure;
//! 5. compute `dPhi/dS` of the new objective value for the next iteration.

use nalgebra::{DMatrix, DVector};

use crate::error::{OfoError, Result};
use crate::model::{
    reduced_gradient, sym_eigenvalues, AdaptationMode, ConstraintSet, ControllerState, OfoParams, Plant,
    ScalingSensitivity,
};
use crate::qp::{solve_w, QpData, QpStatus, KKT_TOL};
use crate::scaling::{adapt_heuristic, adapt_sdp};
use crate::sensitivity::{objective_scaling_sensitivity, qp_solution_jacobians};
use crate::step::{fit_quadratic, minimize_quadratic};

/// Steps with `||w||` below this count towards convergence.
pub const CONVERGED_W: f64 = 1e-9;
/// Consecutive quiet steps needed to stop early.
pub const CONVERGED_STEPS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub phi: f64,
    pub w: DVector<f64>,
    pub alpha: f64,
    /// Ascending eigenvalues of the metric used at this step.
    pub s_eigs: DVector<f64>,
    /// Diagonal of that metric.
    pub s_diag: DVector<f64>,
    /// Frobenius norm of the sensitivity computed at this step.
    pub d_norm: f64,
    /// Diagonal of that sensitivity, zero when none was computed.
    pub d_diag: DVector<f64>,
    /// Active QP rows, input rows first.
    pub active_constraints: Vec<usize>,
    pub adapted: bool,
    pub qp_status: QpStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    MaxIters,
    Converged,
    Error(String),
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub params: OfoParams,
    pub plant_id: String,
    /// Output channel under setpoint tracking, copied from the plant.
    pub tracked_output: Option<usize>,
    pub termination: Termination,
}

impl RunTrace {
    pub fn phis(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.phi).collect()
    }

    pub fn final_record(&self) -> &IterationRecord {
        self.records.last().expect("a trace always holds the initial record")
    }

    /// First index with `|phi - target| <= tol`.
    pub fn first_within(&self, target: f64, tol: f64) -> Option<usize> {
        self.records.iter().position(|r| (r.phi - target).abs() <= tol)
    }

    /// Number of steps where the objective rose by more than `tol`.
    pub fn increases(&self, tol: f64) -> usize {
        self.records.windows(2).filter(|w| w[1].phi > w[0].phi + tol).count()
    }
}

/// Executes one controller iteration and returns the next state together
/// with the record of this step.
pub fn ofo_iteration<P: Plant + ?Sized>(
    state: &ControllerState,
    plant: &mut P,
    cons: &ConstraintSet,
    params: &OfoParams,
) -> Result<(ControllerState, IterationRecord)> {
    let u = &state.u;
    let y = &state.y;
    let n = u.len();
    let g = reduced_gradient(&*plant, u, y)?;
    let phi = plant.objective(u, y);
    if !phi.is_finite() {
        return Err(OfoError::InvalidModel(format!("objective not finite at step {}", state.k)));
    }

    let mut s = state.s.clone();
    let mut adapted = false;
    if params.mode != AdaptationMode::Fixed && g.dot(&state.w) < 0.0 {
        if let Some(d) = &state.dphi_ds {
            if let Some(next) = adapt_metric(&s, d, params) {
                s = next;
                adapted = true;
            }
        }
    }

    let grad_h = plant.sensitivity(u, y);
    let qp = QpData::assemble(&s, &g, u, y, &grad_h, cons, params.alpha_max)?;
    let sol = solve_w(&qp, KKT_TOL);
    let w = if sol.is_optimal() { sol.w.clone() } else { DVector::zeros(n) };

    let alpha = if params.step_adaptation && w.amax() > 0.0 {
        let alpha_tilde = state.alpha;
        let dphi0 = g.dot(&w);
        let u_pred = u + &w * alpha_tilde;
        let y_pred = y + &grad_h * &w * alpha_tilde;
        let phi_at = plant.objective(&u_pred, &y_pred);
        let model = fit_quadratic(phi, dphi0, phi_at, alpha_tilde)?;
        let a = minimize_quadratic(&model, params.alpha_min, params.alpha_max);
        if a.is_finite() {
            a
        } else {
            state.alpha
        }
    } else if params.step_adaptation {
        state.alpha
    } else {
        params.alpha0
    };

    let u_next = u + &w * alpha;
    let y_next = plant.measure(&u_next)?;
    if y_next.iter().any(|v| !v.is_finite()) {
        return Err(OfoError::InvalidModel(format!("non-finite measurement at step {}", state.k)));
    }

    let diagonal = params.mode.is_diagonal();
    let d = if sol.is_optimal() && w.amax() > 0.0 {
        let jac = qp_solution_jacobians(&qp, &sol, diagonal);
        if jac.valid {
            objective_scaling_sensitivity(&*plant, &u_next, &y_next, &jac, alpha, diagonal).ok()
        } else {
            None
        }
    } else {
        None
    };

    let record = IterationRecord {
        k: state.k,
        u: u.clone(),
        y: y.clone(),
        phi,
        w: w.clone(),
        alpha,
        s_eigs: sym_eigenvalues(&s),
        s_diag: s.diagonal(),
        d_norm: d.as_ref().map_or(0.0, ScalingSensitivity::frobenius_norm),
        d_diag: d.as_ref().map_or_else(|| DVector::zeros(n), ScalingSensitivity::diagonal),
        active_constraints: sol.active.clone(),
        adapted,
        qp_status: sol.status,
    };

    let n1 = qp.n_input_rows;
    let next_grad = reduced_gradient(&*plant, &u_next, &y_next)?;
    let next = ControllerState {
        k: state.k + 1,
        u: u_next,
        y: y_next,
        w,
        alpha,
        s,
        reduced_grad: next_grad,
        dphi_ds: d,
        active_inputs: sol.active.iter().copied().filter(|&i| i < n1).collect(),
        active_outputs: sol.active.iter().filter(|&&i| i >= n1).map(|i| i - n1).collect(),
    };
    Ok((next, record))
}

/// Applies the configured adaptation rule; `None` keeps the current metric.
fn adapt_metric(s: &DMatrix<f64>, d: &ScalingSensitivity, params: &OfoParams) -> Option<DMatrix<f64>> {
    match params.mode {
        AdaptationMode::Fixed => None,
        AdaptationMode::HeuristicDiagonal => {
            let next = adapt_heuristic(&s.diagonal(), &d.diagonal(), params);
            Some(DMatrix::from_diagonal(&next))
        }
        AdaptationMode::SdpFull | AdaptationMode::SdpDiagonal => {
            let res = adapt_sdp(s, d, params, params.mode.is_diagonal());
            res.is_optimal().then(|| s + res.delta_s)
        }
    }
}

/// Runs the controller from `u0` for `n_iters` iterations, or until `w`
/// vanishes with no adaptation for [`CONVERGED_STEPS`] consecutive steps.
///
/// The trace holds one record per iteration plus a final record for the
/// last measured state.
pub fn run<P: Plant + ?Sized>(
    plant: &mut P,
    cons: &ConstraintSet,
    params: &OfoParams,
    u0: &DVector<f64>,
    n_iters: usize,
) -> Result<RunTrace> {
    params.validate()?;
    cons.check_dims(plant.n_u(), plant.n_y())?;
    if u0.len() != plant.n_u() || params.n_u() != plant.n_u() {
        return Err(OfoError::Dimension(format!(
            "u0 has {} entries, S0 is {}x{}, plant has n_u={}",
            u0.len(),
            params.n_u(),
            params.n_u(),
            plant.n_u()
        )));
    }
    if cons.input_violation(u0) > 1e-9 {
        return Err(OfoError::InvalidParams("u0 violates the input constraints".into()));
    }
    let y0 = plant.initial_output(u0)?;
    let mut state = ControllerState::initial(u0.clone(), y0, params);
    let mut trace = RunTrace {
        records: Vec::with_capacity(n_iters + 1),
        params: params.clone(),
        plant_id: plant.name().to_string(),
        tracked_output: plant.tracked_output(),
        termination: Termination::MaxIters,
    };
    let mut quiet = 0;
    for _ in 0..n_iters {
        match ofo_iteration(&state, plant, cons, params) {
            Ok((next, record)) => {
                let still = record.w.norm() <= CONVERGED_W && !record.adapted;
                trace.records.push(record);
                state = next;
                quiet = if still { quiet + 1 } else { 0 };
                if quiet >= CONVERGED_STEPS {
                    trace.termination = Termination::Converged;
                    break;
                }
            }
            Err(e) => {
                trace.termination = Termination::Error(e.to_string());
                break;
            }
        }
    }
    trace.records.push(final_record(&*plant, &state));
    Ok(trace)
}

fn final_record<P: Plant + ?Sized>(plant: &P, state: &ControllerState) -> IterationRecord {
    let n = state.u.len();
    IterationRecord {
        k: state.k,
        u: state.u.clone(),
        y: state.y.clone(),
        phi: plant.objective(&state.u, &state.y),
        w: DVector::zeros(n),
        alpha: state.alpha,
        s_eigs: sym_eigenvalues(&state.s),
        s_diag: state.s.diagonal(),
        d_norm: state.dphi_ds.as_ref().map_or(0.0, ScalingSensitivity::frobenius_norm),
        d_diag: state
            .dphi_ds
            .as_ref()
            .map_or_else(|| DVector::zeros(n), ScalingSensitivity::diagonal),
        active_constraints: Vec::new(),
        adapted: false,
        qp_status: QpStatus::Optimal,
    }
}
