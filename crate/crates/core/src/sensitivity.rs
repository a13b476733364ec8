//! Sensitivity of the objective to the scaling matrix.
//!
//! `dw/dS` comes from implicit differentiation of the QP's KKT conditions with
//! the working set held fixed:
//!
//! ```text
//!     P w + q + G_W' lambda_W = 0
//!     G_W w = h_W
//! ```
//!
//! and `d(S^-1) = -S^-1 dS S^-1`. Entries of `S` are treated as independent,
//! so `dw/dS_ij` and `dw/dS_ji` are reported separately; vec(S) stacks the
//! columns of `S`.

use nalgebra::{DMatrix, DVector, LU};

use crate::error::{OfoError, Result};
use crate::model::{reduced_gradient, ConstraintSet, Plant, ScalingSensitivity};
use crate::qp::{QpData, QpSolution, ACT_TOL};

/// Minimum multiplier on working rows for the derivative to be trusted.
pub const COMPLEMENTARITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QpJacobians {
    /// `n_u x n_u^2`, column `j * n_u + i` holds `dw/dS_ij`.
    pub dw_dvecs: DMatrix<f64>,
    /// `dw/du` with `y` held, present after [`QpJacobians::attach_input_jacobians`].
    pub dw_du: Option<DMatrix<f64>>,
    /// `dw/dy` with `u` held.
    pub dw_dy: Option<DMatrix<f64>>,
    /// Plant sensitivity at the iterate, used to chain `dw/dy` into `dw/du`.
    pub dy_du: Option<DMatrix<f64>>,
    pub valid: bool,
}

impl QpJacobians {
    fn invalid(n: usize) -> Self {
        Self {
            dw_dvecs: DMatrix::zeros(n, n * n),
            dw_du: None,
            dw_dy: None,
            dy_du: None,
            valid: false,
        }
    }

    /// `dw/dS_ij`.
    pub fn entry(&self, i: usize, j: usize) -> DVector<f64> {
        let n = self.dw_dvecs.nrows();
        self.dw_dvecs.column(j * n + i).into_owned()
    }

    /// Total derivative of `w` with respect to `u` when `y` follows the plant,
    /// `dw/du + dw/dy * dy/du`.
    pub fn total_input_jacobian(&self) -> Option<DMatrix<f64>> {
        let du = self.dw_du.as_ref()?;
        let dy = self.dw_dy.as_ref()?;
        let dy_du = self.dy_du.as_ref()?;
        Some(du + dy * dy_du)
    }

    /// Fills `dw/du`, `dw/dy` by differentiating the QP data with central
    /// differences of the plant gradients and sensitivity, then solving the
    /// same fixed-working-set KKT system.
    #[allow(clippy::too_many_arguments)]
    pub fn attach_input_jacobians<P: Plant + ?Sized>(
        &mut self,
        plant: &P,
        cons: &ConstraintSet,
        qp: &QpData,
        sol: &QpSolution,
        s: &DMatrix<f64>,
        u: &DVector<f64>,
        y: &DVector<f64>,
        alpha_max: f64,
    ) -> Result<()> {
        if !self.valid {
            return Err(OfoError::InvalidJacobians("cannot extend invalid jacobians".into()));
        }
        let kkt = KktSystem::new(qp, sol)
            .ok_or_else(|| OfoError::InvalidJacobians("degenerate working set".into()))?;
        let assemble = |uu: &DVector<f64>, yy: &DVector<f64>| -> Result<QpData> {
            let g = reduced_gradient(plant, uu, yy)?;
            let grad_h = plant.sensitivity(uu, yy);
            QpData::assemble(s, &g, uu, yy, &grad_h, cons, alpha_max)
        };
        let n = u.len();
        let mut dw_du = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = crate::model::fd_step(u[j]);
            let (mut up, mut um) = (u.clone(), u.clone());
            up[j] += h;
            um[j] -= h;
            let dw = kkt.data_derivative(&assemble(&up, y)?, &assemble(&um, y)?, 2.0 * h, &sol.w);
            dw_du.set_column(j, &dw);
        }
        let mut dw_dy = DMatrix::zeros(n, y.len());
        for j in 0..y.len() {
            let h = crate::model::fd_step(y[j]);
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp[j] += h;
            ym[j] -= h;
            let dw = kkt.data_derivative(&assemble(u, &yp)?, &assemble(u, &ym)?, 2.0 * h, &sol.w);
            dw_dy.set_column(j, &dw);
        }
        self.dw_du = Some(dw_du);
        self.dw_dy = Some(dw_dy);
        self.dy_du = Some(plant.sensitivity(u, y));
        Ok(())
    }
}

/// Factorized KKT matrix for the working set of an optimal solution.
struct KktSystem {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    working: Vec<usize>,
    lambda: DVector<f64>,
    n: usize,
}

impl KktSystem {
    fn new(qp: &QpData, sol: &QpSolution) -> Option<Self> {
        if !sol.is_optimal() {
            return None;
        }
        let working = &sol.working_set;
        if working.iter().any(|&i| sol.duals[i] < COMPLEMENTARITY_MARGIN) {
            return None;
        }
        // active by tolerance but carrying no multiplier: weakly active row
        if sol.active.iter().any(|i| !working.contains(i)) {
            return None;
        }
        let near_active = (0..qp.n_rows()).filter(|i| !working.contains(i)).any(|i| {
            let slack = qp.h[i] - qp.g.row(i).dot(&sol.w.transpose());
            slack.abs() <= ACT_TOL * (1.0 + qp.h[i].abs())
        });
        if near_active {
            return None;
        }
        let n = qp.n();
        let q = working.len();
        let mut k = DMatrix::zeros(n + q, n + q);
        k.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        for (c, &i) in working.iter().enumerate() {
            for j in 0..n {
                k[(n + c, j)] = qp.g[(i, j)];
                k[(j, n + c)] = qp.g[(i, j)];
            }
        }
        let lu = k.lu();
        if !lu.is_invertible() {
            return None;
        }
        // reject near-singular working sets
        let det = lu.determinant().abs();
        if !(det.is_finite() && det > 0.0) {
            return None;
        }
        let lambda = DVector::from_iterator(q, working.iter().map(|&i| sol.duals[i]));
        Some(Self {
            lu,
            working: working.clone(),
            lambda,
            n,
        })
    }

    /// Solves for `dw` given the perturbation of the stationarity residual
    /// `r_stat` and of the working-row residual `r_prim`.
    fn solve(&self, r_stat: &DVector<f64>, r_prim: &DVector<f64>) -> DVector<f64> {
        let q = self.working.len();
        let mut rhs = DVector::zeros(self.n + q);
        rhs.rows_mut(0, self.n).copy_from(&(-r_stat));
        rhs.rows_mut(self.n, q).copy_from(&(-r_prim));
        let sol = self.lu.solve(&rhs).expect("factorization checked invertible");
        sol.rows(0, self.n).into_owned()
    }

    /// `dw` for a data perturbation given as a central difference of two
    /// assembled QPs.
    fn data_derivative(&self, plus: &QpData, minus: &QpData, width: f64, w: &DVector<f64>) -> DVector<f64> {
        let dp = (&plus.p - &minus.p) / width;
        let dq = (&plus.q - &minus.q) / width;
        let dg = (&plus.g - &minus.g) / width;
        let dh = (&plus.h - &minus.h) / width;
        let mut r_stat = &dp * w + &dq;
        let mut r_prim = DVector::zeros(self.working.len());
        for (c, &i) in self.working.iter().enumerate() {
            let row = dg.row(i).transpose();
            r_stat += &row * self.lambda[c];
            r_prim[c] = row.dot(w) - dh[i];
        }
        self.solve(&r_stat, &r_prim)
    }
}

/// Jacobian of the QP solution with respect to the entries of `S`.
///
/// With `diagonal_only` the off-diagonal columns are left at zero.
pub fn qp_solution_jacobians(qp: &QpData, sol: &QpSolution, diagonal_only: bool) -> QpJacobians {
    let n = qp.n();
    let Some(kkt) = KktSystem::new(qp, sol) else {
        return QpJacobians::invalid(n);
    };
    let pw = &qp.p * &sol.w;
    let zero = DVector::zeros(kkt.working.len());
    let mut dw_dvecs = DMatrix::zeros(n, n * n);
    for j in 0..n {
        for i in 0..n {
            if diagonal_only && i != j {
                continue;
            }
            // dP w = -P E_ij P w = -P e_i (P w)_j
            let r_stat = -(qp.p.column(i) * pw[j]);
            let dw = kkt.solve(&r_stat, &zero);
            dw_dvecs.set_column(j * n + i, &dw);
        }
    }
    let valid = dw_dvecs.iter().all(|v| v.is_finite());
    QpJacobians {
        dw_dvecs,
        dw_du: None,
        dw_dy: None,
        dy_du: None,
        valid,
    }
}

/// One-step sensitivity `dPhi(u+, y+)/dS_ij = grad(u+, y+) . alpha . dw/dS_ij`.
///
/// In full mode the result is symmetrized; diagonal modes keep the diagonal.
pub fn objective_scaling_sensitivity<P: Plant + ?Sized>(
    plant: &P,
    u_next: &DVector<f64>,
    y_next: &DVector<f64>,
    jac: &QpJacobians,
    alpha: f64,
    diagonal_only: bool,
) -> Result<ScalingSensitivity> {
    if !jac.valid {
        return Err(OfoError::InvalidJacobians("active set degenerate".into()));
    }
    let left = reduced_gradient(plant, u_next, y_next)?;
    let n = left.len();
    let row = left.transpose() * &jac.dw_dvecs * alpha;
    let mut d = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            if diagonal_only && i != j {
                continue;
            }
            d[(i, j)] = row[j * n + i];
        }
    }
    if !diagonal_only {
        d = crate::model::symmetrize(&d);
    }
    let out = ScalingSensitivity { d };
    if !out.is_finite() {
        return Err(OfoError::InvalidModel("non-finite scaling sensitivity".into()));
    }
    Ok(out)
}

/// One entry of the history consumed by [`accumulate_input_sensitivity`].
#[derive(Debug, Clone)]
pub struct StepJacobians {
    pub alpha: f64,
    pub jac: QpJacobians,
}

/// `du^k/dS^l = sum_{m=l}^{k-1} alpha^m dw^m/dS^l`, `k = history.len()`.
///
/// For `m > l`, `w^m` depends on `S^l` only through `u^m`, so the sum is
/// propagated recursively through the total input jacobian of each step.
/// Returns an `n_u x n_u^2` matrix in vec(S) column order.
pub fn accumulate_input_sensitivity(history: &[StepJacobians], l: usize) -> Result<DMatrix<f64>> {
    let k = history.len();
    let Some(first) = history.first() else {
        return Err(OfoError::InvalidJacobians("empty history".into()));
    };
    let n = first.jac.dw_dvecs.nrows();
    let mut du_ds = DMatrix::zeros(n, n * n);
    if l >= k {
        return Ok(du_ds);
    }
    for (m, step) in history.iter().enumerate().skip(l) {
        if !step.jac.valid {
            return Err(OfoError::InvalidJacobians(format!("step {m} has invalid jacobians")));
        }
        let mut dw = if m == l {
            step.jac.dw_dvecs.clone()
        } else {
            let total = step.jac.total_input_jacobian().ok_or_else(|| {
                OfoError::InvalidJacobians(format!("step {m} lacks input jacobians"))
            })?;
            total * &du_ds
        };
        dw *= step.alpha;
        du_ds += dw;
    }
    Ok(du_ds)
}
