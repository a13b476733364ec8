//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ofo_core::model::{reduced_gradient, ConstraintSet, OfoParams, Plant, ScalingSensitivity};
use ofo_core::qp::{solve_w, QpData, KKT_TOL};
use ofo_core::sensitivity::{objective_scaling_sensitivity, qp_solution_jacobians};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random SPD matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_orthogonal(rng, n);
    let eig = DVector::from_fn(n, |_, _| rng.random_range(lo..hi));
    &q * DMatrix::from_diagonal(&eig) * q.transpose()
}

pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    m.qr().q()
}

pub fn random_symmetric(rng: &mut impl Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-scale..scale));
    (&m + m.transpose()) * 0.5
}

/// Minimizes `1/2 w'Pw + q'w` s.t. `Gw <= h` by trying every subset of rows
/// as the active set and keeping the best KKT point.
pub fn brute_force_qp(p: &DMatrix<f64>, q: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> Option<DVector<f64>> {
    let n = p.nrows();
    let m = g.nrows();
    assert!(m <= 12, "enumeration is exponential in the row count");
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if rows.len() > n {
            continue;
        }
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(p);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-q));
        for (r, &i) in rows.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = g[(i, c)];
                kkt[(c, n + r)] = g[(i, c)];
            }
            rhs[n + r] = h[i];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
            continue;
        }
        let w = sol.rows(0, n).into_owned();
        let lam = sol.rows(n, k).into_owned();
        let feasible = (0..m).all(|i| g.row(i).dot(&w.transpose()) <= h[i] + 1e-9 * (1.0 + h[i].abs()));
        if !feasible || lam.iter().any(|l| *l < -1e-9) {
            continue;
        }
        let obj = 0.5 * w.dot(&(p * &w)) + q.dot(&w);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, w));
        }
    }
    best.map(|(_, w)| w)
}

/// Everything needed to replay one controller step from a fixed iterate.
pub struct StepSetup<'a, P: Plant + Clone> {
    pub plant: &'a P,
    pub cons: &'a ConstraintSet,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DMatrix<f64>,
    pub alpha: f64,
    pub alpha_max: f64,
    /// Replace the plant response by its first-order model around the
    /// realized next iterate. Needed for plants with dynamics, whose
    /// transient response differs from the steady-state sensitivity.
    pub linear_output: bool,
}

impl<P: Plant + Clone> StepSetup<'_, P> {
    /// `Phi(u + alpha w(S), measure(u + alpha w(S)))`, or `None` when the QP
    /// is not solved to optimality.
    pub fn next_phi(&self, s: &DMatrix<f64>) -> Option<f64> {
        let (u_next, mut plant) = self.step_to(s)?;
        if self.linear_output {
            let (u_ref, mut ref_plant) = self.step_to(&self.s)?;
            let y_ref = ref_plant.measure(&u_ref).ok()?;
            let y = &y_ref + ref_plant.sensitivity(&u_ref, &y_ref) * (&u_next - &u_ref);
            return Some(ref_plant.objective(&u_next, &y));
        }
        let y_next = plant.measure(&u_next).ok()?;
        Some(plant.objective(&u_next, &y_next))
    }

    fn step_to(&self, s: &DMatrix<f64>) -> Option<(DVector<f64>, P)> {
        let g = reduced_gradient(self.plant, &self.u, &self.y).ok()?;
        let grad_h = self.plant.sensitivity(&self.u, &self.y);
        let qp = QpData::assemble(s, &g, &self.u, &self.y, &grad_h, self.cons, self.alpha_max).ok()?;
        let sol = solve_w(&qp, KKT_TOL);
        if !sol.is_optimal() {
            return None;
        }
        Some((&self.u + &sol.w * self.alpha, self.plant.clone()))
    }

    /// Library sensitivity at this iterate together with the active rows.
    pub fn library(&self, diagonal: bool) -> Option<(ScalingSensitivity, Vec<usize>)> {
        let g = reduced_gradient(self.plant, &self.u, &self.y).ok()?;
        let grad_h = self.plant.sensitivity(&self.u, &self.y);
        let qp = QpData::assemble(&self.s, &g, &self.u, &self.y, &grad_h, self.cons, self.alpha_max).ok()?;
        let sol = solve_w(&qp, KKT_TOL);
        if !sol.is_optimal() {
            return None;
        }
        let jac = qp_solution_jacobians(&qp, &sol, diagonal);
        if !jac.valid {
            return None;
        }
        let u_next = &self.u + &sol.w * self.alpha;
        let mut plant = self.plant.clone();
        let y_next = plant.measure(&u_next).ok()?;
        let d = objective_scaling_sensitivity(&plant, &u_next, &y_next, &jac, self.alpha, diagonal).ok()?;
        Some((d, sol.active))
    }

    /// Central difference of the next objective along the symmetric
    /// direction `E_ij + E_ji` (or `E_ii`).
    pub fn fd_entry(&self, i: usize, j: usize, eps: f64) -> Option<f64> {
        let mut sp = self.s.clone();
        let mut sm = self.s.clone();
        sp[(i, j)] += eps;
        sm[(i, j)] -= eps;
        if i != j {
            sp[(j, i)] += eps;
            sm[(j, i)] -= eps;
        }
        Some((self.next_phi(&sp)? - self.next_phi(&sm)?) / (2.0 * eps))
    }

    /// Active rows of the QP at metric `s`.
    pub fn active_rows(&self, s: &DMatrix<f64>) -> Option<Vec<usize>> {
        let g = reduced_gradient(self.plant, &self.u, &self.y).ok()?;
        let grad_h = self.plant.sensitivity(&self.u, &self.y);
        let qp = QpData::assemble(s, &g, &self.u, &self.y, &grad_h, self.cons, self.alpha_max).ok()?;
        let sol = solve_w(&qp, KKT_TOL);
        sol.is_optimal().then_some(sol.active)
    }
}

/// Relative error with an absolute floor for small true values.
pub fn close(lib: f64, oracle: f64, rel: f64, abs_floor: f64, small: f64) -> bool {
    let err = (lib - oracle).abs();
    if oracle.abs() < small {
        err <= abs_floor
    } else {
        err <= rel * oracle.abs()
    }
}

/// Compares every populated entry of the library sensitivity at `setup`
/// with the finite-difference oracle. Returns `None` when the iterate is
/// degenerate (perturbations change the active set).
pub fn check_sensitivity<P: Plant + Clone>(setup: &StepSetup<'_, P>, diagonal: bool) -> Option<Result<usize, String>> {
    const EPS: f64 = 1e-5;
    let (d, active) = setup.library(diagonal)?;
    let n = setup.s.nrows();
    let mut checked = 0;
    for i in 0..n {
        for j in i..n {
            if diagonal && i != j {
                continue;
            }
            for sign in [1.0, -1.0] {
                let mut s = setup.s.clone();
                s[(i, j)] += sign * EPS;
                if i != j {
                    s[(j, i)] += sign * EPS;
                }
                if setup.active_rows(&s)? != active {
                    return None;
                }
            }
            let fd = setup.fd_entry(i, j, EPS)?;
            // symmetric perturbation hits both (i, j) and (j, i)
            let lib = if i == j { d.d[(i, i)] } else { d.d[(i, j)] + d.d[(j, i)] };
            if !close(lib, fd, 1e-4, 1e-8, 1e-4) {
                return Some(Err(format!("entry ({i},{j}): library {lib:e}, finite difference {fd:e}")));
            }
            checked += 1;
        }
    }
    Some(Ok(checked))
}

/// Best value of `p + t` reachable by an explicit feasible metric built from
/// the eigenvectors of `D`, scanning `t` on a grid plus the exact endpoints.
/// A lower bound on the optimum of the metric problem.
pub fn sdp_witness_value(s: &DMatrix<f64>, d: &DMatrix<f64>, prm: &OfoParams, diagonal: bool) -> f64 {
    let n = s.nrows();
    let (vecs, vals) = if diagonal {
        (DMatrix::identity(n, n), d.diagonal())
    } else {
        let e = SymmetricEigen::new((d + d.transpose()) * 0.5);
        (e.eigenvectors, e.eigenvalues)
    };
    let d_sym = if diagonal { DMatrix::from_diagonal(&d.diagonal()) } else { (d + d.transpose()) * 0.5 };
    let mut best = f64::NEG_INFINITY;
    let steps = 4000;
    let mut ts: Vec<f64> = (0..=steps)
        .map(|k| prm.t_min + (prm.t_max - prm.t_min) * k as f64 / steps as f64)
        .collect();
    ts.push(prm.t_min);
    ts.push(prm.t_max);
    for t in ts {
        let diag = DVector::from_fn(n, |i, _| if vals[i] > 0.0 { t } else { prm.t_max });
        let x = &vecs * DMatrix::from_diagonal(&diag) * vecs.transpose();
        let p = (-d_sym.dot(&(&x - s))).min(prm.p_max);
        if p >= 0.0 {
            best = best.max(p + t);
        }
    }
    best
}

/// Upper-bound probe: random feasible metrics must not beat the optimum.
pub fn sdp_random_probe(rng: &mut impl Rng, s: &DMatrix<f64>, d: &DMatrix<f64>, prm: &OfoParams, diagonal: bool, samples: usize) -> f64 {
    let n = s.nrows();
    let d_sym = (d + d.transpose()) * 0.5;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..samples {
        let t = rng.random_range(prm.t_min..=prm.t_max);
        let x = if diagonal {
            DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(t..=prm.t_max)))
        } else {
            let q = random_orthogonal(rng, n);
            let e = DVector::from_fn(n, |_, _| rng.random_range(t..=prm.t_max));
            &q * DMatrix::from_diagonal(&e) * q.transpose()
        };
        let d_used = if diagonal { DMatrix::from_diagonal(&d.diagonal()) } else { d_sym.clone() };
        let p = (-d_used.dot(&(&x - s))).min(prm.p_max);
        if p >= 0.0 {
            best = best.max(p + t);
        }
    }
    best
}

/// Walks fixed-metric controller runs from random starts and random metrics
/// and checks the sensitivity at each visited iterate until `wanted`
/// non-degenerate iterates have been compared. Returns the number of
/// compared iterates and any mismatches.
#[allow(clippy::too_many_arguments)]
pub fn sweep_sensitivity<P: Plant + Clone>(
    plant: &P,
    cons: &ConstraintSet,
    u_lo: &[f64],
    u_hi: &[f64],
    alpha: f64,
    eig_range: (f64, f64),
    diagonal: bool,
    linear_output: bool,
    wanted: usize,
    seed: u64,
) -> (usize, Vec<String>) {
    use ofo_core::controller::ofo_iteration;
    use ofo_core::model::{AdaptationMode, ControllerState};

    let mut r = rng(seed);
    let n = u_lo.len();
    let mut good = 0;
    let mut failures = Vec::new();
    for _attempt in 0..200 {
        if good >= wanted {
            break;
        }
        let s = if diagonal {
            DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| r.random_range(eig_range.0..eig_range.1)))
        } else {
            random_spd(&mut r, n, eig_range.0, eig_range.1)
        };
        let u0 = DVector::from_fn(n, |i, _| {
            let w = u_hi[i] - u_lo[i];
            r.random_range(u_lo[i] + 0.1 * w..u_hi[i] - 0.1 * w)
        });
        let mut prm = OfoParams::new(s.clone(), alpha, eig_range.1.max(1.0));
        prm.mode = AdaptationMode::Fixed;
        let mut live = plant.clone();
        let Ok(y0) = live.initial_output(&u0) else { continue };
        let mut state = ControllerState::initial(u0, y0, &prm);
        let skip = r.random_range(0..4usize);
        for k in 0..6 {
            if k >= skip {
                let frozen = live.clone();
                let setup = StepSetup {
                    plant: &frozen,
                    cons,
                    u: state.u.clone(),
                    y: state.y.clone(),
                    s: s.clone(),
                    alpha,
                    alpha_max: alpha,
                    linear_output,
                };
                match check_sensitivity(&setup, diagonal) {
                    Some(Ok(_)) => {
                        good += 1;
                        break;
                    }
                    Some(Err(e)) => {
                        failures.push(format!("u={:?}: {e}", state.u.as_slice()));
                        break;
                    }
                    None => {}
                }
            }
            match ofo_iteration(&state, &mut live, cons, &prm) {
                Ok((next, _)) => state = next,
                Err(_) => break,
            }
        }
    }
    (good, failures)
}
