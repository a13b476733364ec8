//! The per-iteration direction problem
//!
//! ```text
//!     minimize    || w + S g ||^2_{S^-1}
//!     subject to  A (u + alpha_max w) <= b
//!                 C (y + alpha_max grad_h w) <= d
//! ```
//!
//! expanded to `1/2 w' P w + g' w` with `P = S^-1` and solved with the
//! Goldfarb-Idnani dual active-set method. Starting from the unconstrained
//! minimizer `w = -S g` means no feasible starting point is needed and an
//! empty polytope is detected rather than assumed away.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{OfoError, Result};
use crate::model::{reduced_gradient, sym_eigenvalues, symmetrize, ConstraintSet, ControllerState, Plant};

/// Rows with `|G_i w - h_i|` below this are reported active.
pub const ACT_TOL: f64 = 1e-7;
/// Default KKT residual tolerance.
pub const KKT_TOL: f64 = 1e-8;
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct QpData {
    /// Hessian, `S^-1`.
    pub p: DMatrix<f64>,
    /// Linear term, the reduced gradient.
    pub q: DVector<f64>,
    /// Stacked inequality rows: input rows first, then output rows.
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub n_input_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub w: DVector<f64>,
    /// One multiplier per row of `G`, zero for inactive rows.
    pub duals: DVector<f64>,
    /// Rows with `|G_i w - h_i| <= act_tol`.
    pub active: Vec<usize>,
    /// Rows in the solver's final working set, linearly independent.
    pub working_set: Vec<usize>,
    pub status: QpStatus,
    pub kkt_residual: f64,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

impl QpData {
    /// Builds the QP from raw iterate data.
    pub fn assemble(
        s: &DMatrix<f64>,
        g: &DVector<f64>,
        u: &DVector<f64>,
        y: &DVector<f64>,
        grad_h: &DMatrix<f64>,
        cons: &ConstraintSet,
        alpha_max: f64,
    ) -> Result<Self> {
        let n = s.nrows();
        if !s.is_square() || g.len() != n || u.len() != n || grad_h.ncols() != n {
            return Err(OfoError::Dimension("qp assembly inputs disagree on n_u".into()));
        }
        cons.check_dims(n, y.len())?;
        let p = metric_inverse(s)?;
        let input_rows = &cons.a * alpha_max;
        let output_rows = &cons.c * grad_h * alpha_max;
        let n1 = input_rows.nrows();
        let n2 = output_rows.nrows();
        let mut gm = DMatrix::zeros(n1 + n2, n);
        gm.rows_mut(0, n1).copy_from(&input_rows);
        gm.rows_mut(n1, n2).copy_from(&output_rows);
        let mut h = DVector::zeros(n1 + n2);
        h.rows_mut(0, n1).copy_from(&(&cons.b - &cons.a * u));
        h.rows_mut(n1, n2).copy_from(&(&cons.d - &cons.c * y));
        Ok(Self {
            p,
            q: g.clone(),
            g: gm,
            h,
            n_input_rows: n1,
        })
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_rows(&self) -> usize {
        self.g.nrows()
    }

    /// `1/2 w' P w + q' w`.
    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.p * w)) + self.q.dot(w)
    }
}

/// Assembles the QP for the current controller state.
pub fn assemble_qp<P: Plant + ?Sized>(
    state: &ControllerState,
    plant: &P,
    cons: &ConstraintSet,
    alpha_max: f64,
) -> Result<QpData> {
    let g = reduced_gradient(plant, &state.u, &state.y)?;
    let grad_h = plant.sensitivity(&state.u, &state.y);
    QpData::assemble(&state.s, &g, &state.u, &state.y, &grad_h, cons, alpha_max)
}

/// `S^-1` via a symmetric eigendecomposition, rejecting near-singular metrics.
pub fn metric_inverse(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eigs = sym_eigenvalues(s);
    let lo = eigs[0];
    let hi = eigs[eigs.len() - 1];
    if !(lo > 0.0) {
        return Err(OfoError::NotPositiveDefinite);
    }
    let cond = hi / lo;
    if cond > MAX_CONDITION {
        return Err(OfoError::IllConditionedMetric(cond));
    }
    let chol = Cholesky::new(symmetrize(s)).ok_or(OfoError::NotPositiveDefinite)?;
    Ok(symmetrize(&chol.inverse()))
}

/// Solves the QP to KKT residual `tol`.
pub fn solve_w(qp: &QpData, tol: f64) -> QpSolution {
    let n = qp.n();
    let m = qp.n_rows();
    let failure = |status| QpSolution {
        w: DVector::zeros(n),
        duals: DVector::zeros(m),
        active: Vec::new(),
        working_set: Vec::new(),
        status,
        kkt_residual: f64::INFINITY,
    };

    let Some(chol) = Cholesky::new(qp.p.clone()) else {
        return failure(QpStatus::NumericalFailure);
    };
    let hinv = symmetrize(&chol.inverse());
    let hinv_norm = hinv.amax();
    let row_norms: Vec<f64> = (0..m).map(|i| qp.g.row(i).norm()).collect();
    let scale = 1.0 + qp.h.amax();
    if (0..m).any(|i| row_norms[i] == 0.0 && qp.h[i] < -tol * (1.0 + qp.h[i].abs())) {
        return failure(QpStatus::Infeasible);
    }

    let mut x = -(&hinv * &qp.q);
    let mut working: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();

    // slack of row i, positive when satisfied
    let slack = |x: &DVector<f64>, i: usize| qp.h[i] - qp.g.row(i).dot(&x.transpose());

    let max_iter = 50 * (m + n) + 100;
    let mut iter = 0;
    'outer: loop {
        // most violated row, normalized by its norm
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..m {
            if working.contains(&i) || row_norms[i] == 0.0 {
                continue;
            }
            let s = slack(&x, i);
            let viol = s / row_norms[i];
            if s < -tol * (1.0 + qp.h[i].abs()) && pick.is_none_or(|(_, v)| viol < v) {
                pick = Some((i, viol));
            }
        }
        let Some((p, _)) = pick else { break };
        let np = -qp.g.row(p).transpose();
        let mut lambda_p = 0.0;

        loop {
            iter += 1;
            if iter > max_iter {
                return failure(QpStatus::NumericalFailure);
            }
            let (z, r) = match step_directions(&hinv, &qp.g, &working, &np) {
                Some(v) => v,
                None => return failure(QpStatus::NumericalFailure),
            };

            // partial step: first working multiplier to reach zero
            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for (j, rj) in r.iter().enumerate() {
                if *rj > 0.0 {
                    let ratio = lambda[j] / rj;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_k = Some(j);
                    }
                }
            }
            // full step: makes row p active
            let curvature = z.dot(&np);
            let t2 = if curvature > 1e-13 * np.norm_squared() * hinv_norm {
                -slack(&x, p) / curvature
            } else {
                f64::INFINITY
            };

            if t1.is_infinite() && t2.is_infinite() {
                let mut sol = failure(QpStatus::Infeasible);
                sol.w = x;
                return sol;
            }
            if t2.is_infinite() {
                for (l, rj) in lambda.iter_mut().zip(r.iter()) {
                    *l -= t1 * rj;
                }
                lambda_p += t1;
                let k = drop_k.expect("finite t1 has an index");
                working.remove(k);
                lambda.remove(k);
                continue;
            }
            let t = t1.min(t2);
            x += &z * t;
            for (l, rj) in lambda.iter_mut().zip(r.iter()) {
                *l -= t * rj;
            }
            lambda_p += t;
            if t2 <= t1 {
                working.push(p);
                lambda.push(lambda_p);
                continue 'outer;
            }
            let k = drop_k.expect("finite t1 has an index");
            working.remove(k);
            lambda.remove(k);
        }
    }

    let mut duals = DVector::zeros(m);
    for (&i, &l) in working.iter().zip(lambda.iter()) {
        duals[i] = l.max(0.0);
    }
    let active: Vec<usize> = (0..m)
        .filter(|&i| (qp.g.row(i).dot(&x.transpose()) - qp.h[i]).abs() <= ACT_TOL * (1.0 + qp.h[i].abs()))
        .collect();
    let residual = kkt_residual(qp, &x, &duals);
    let status = if residual <= tol.max(1e-12) * scale * (1.0 + qp.q.amax()) {
        QpStatus::Optimal
    } else {
        QpStatus::NumericalFailure
    };
    working.sort_unstable();
    QpSolution {
        w: x,
        duals,
        active,
        working_set: working,
        status,
        kkt_residual: residual,
    }
}

/// Primal step `z = H n_p` and dual step `r = N* n_p` for the current
/// working set, `H` being the reduced inverse Hessian.
fn step_directions(
    hinv: &DMatrix<f64>,
    g: &DMatrix<f64>,
    working: &[usize],
    np: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    if working.is_empty() {
        return Some((hinv * np, DVector::zeros(0)));
    }
    let n = hinv.nrows();
    let mut normals = DMatrix::zeros(n, working.len());
    for (j, &i) in working.iter().enumerate() {
        normals.set_column(j, &(-g.row(i).transpose()));
    }
    let hn = hinv * &normals;
    let gram = normals.transpose() * &hn;
    let gram_chol = Cholesky::new(symmetrize(&gram))?;
    let r = gram_chol.solve(&(hn.transpose() * np));
    let z = hinv * np - &hn * &r;
    Some((z, r))
}

/// Max of stationarity, primal violation, dual sign and complementarity
/// residuals.
pub fn kkt_residual(qp: &QpData, w: &DVector<f64>, duals: &DVector<f64>) -> f64 {
    let stationarity = (&qp.p * w + &qp.q + qp.g.transpose() * duals).amax();
    let slack = &qp.h - &qp.g * w;
    let primal = slack.iter().fold(0.0_f64, |a, s| a.max(-s));
    let dual = duals.iter().fold(0.0_f64, |a, l| a.max(-l));
    let comp = slack
        .iter()
        .zip(duals.iter())
        .fold(0.0_f64, |a, (s, l)| a.max((s * l).abs()));
    stationarity.max(primal).max(dual).max(comp)
}
