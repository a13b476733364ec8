//! Scaling-matrix adaptation.
//!
//! The optimization-based rule picks `S+ = S + dS` from
//!
//! ```text
//!     minimize    -p - t
//!     subject to  <D, dS>_F <= -p
//!                 S + dS - t I  >= 0
//!                 t_max I - (S + dS) >= 0
//!                 dS = dS',  p in [0, p_max],  t in [t_min, t_max]
//! ```
//!
//! Writing `X = S + dS`, the feasible matrices for a given `t` are those with
//! spectrum in `[t, t_max]`, and by the von Neumann trace inequality
//!
//! ```text
//!     min { <D, X> : spec(X) in [t, t_max] } = t * sum(lambda_i(D)^+) + t_max * sum(lambda_i(D)^-)
//! ```
//!
//! so the optimal `(p, t)` solve a two-variable LP exactly. The matrix part is
//! then chosen as the optimal `X` closest to `S` in Frobenius norm, which is the
//! eigenvalue-clipped point `clip(S - mu D)` for the smallest feasible `mu >= 0`.
//!
//! In diagonal mode `dS` is restricted to the diagonal and the eigenvalues of
//! `D` are replaced by its diagonal entries.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::model::{is_diagonal, min_max, sym_eigenvalues, symmetrize, OfoParams, ScalingSensitivity, EIG_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpResult {
    pub delta_s: DMatrix<f64>,
    pub p: f64,
    pub t: f64,
    pub status: SdpStatus,
}

impl SdpResult {
    fn failure(n: usize) -> Self {
        Self {
            delta_s: DMatrix::zeros(n, n),
            p: 0.0,
            t: 0.0,
            status: SdpStatus::NumericalFailure,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }

    /// Checks the post-conditions of an optimal result against `S` and `D`.
    pub fn check_invariants(&self, s: &DMatrix<f64>, d: &ScalingSensitivity, params: &OfoParams) -> Result<(), String> {
        if (&self.delta_s - self.delta_s.transpose()).amax() > 1e-9 {
            return Err("dS not symmetric".into());
        }
        let eigs = sym_eigenvalues(&(s + &self.delta_s));
        let (lo, hi) = min_max(&eigs);
        if lo < self.t - EIG_TOL {
            return Err(format!("lambda_min {lo} < t {}", self.t));
        }
        if hi > params.t_max + EIG_TOL {
            return Err(format!("lambda_max {hi} > t_max {}", params.t_max));
        }
        let descent = symmetrize(&d.d).dot(&self.delta_s);
        if descent > -self.p + 1e-8 {
            return Err(format!("<D, dS> = {descent} > -p = {}", -self.p));
        }
        if self.p < 0.0 || self.p > params.p_max {
            return Err(format!("p = {} outside [0, {}]", self.p, params.p_max));
        }
        if self.t < params.t_min || self.t > params.t_max {
            return Err(format!("t = {} outside [{}, {}]", self.t, params.t_min, params.t_max));
        }
        Ok(())
    }
}

/// Metric update from the linearized descent condition.
pub fn adapt_sdp(s: &DMatrix<f64>, d: &ScalingSensitivity, params: &OfoParams, diagonal: bool) -> SdpResult {
    let n = s.nrows();
    if !s.is_square() || d.d.shape() != s.shape() || !d.is_finite() || s.iter().any(|v| !v.is_finite()) {
        return SdpResult::failure(n);
    }
    if diagonal && !is_diagonal(s) {
        return SdpResult::failure(n);
    }
    let d_sym = if diagonal {
        DMatrix::from_diagonal(&d.d.diagonal())
    } else {
        symmetrize(&d.d)
    };
    let spectrum: DVector<f64> = if diagonal {
        d_sym.diagonal()
    } else {
        SymmetricEigen::new(d_sym.clone()).eigenvalues
    };
    let pos: f64 = spectrum.iter().filter(|v| **v > 0.0).sum();
    let neg: f64 = spectrum.iter().filter(|v| **v < 0.0).sum();
    let inner_s = d_sym.dot(s);
    // p + t * pos <= rhs is the whole feasible set in (p, t)
    let rhs = inner_s - params.t_max * neg;

    let (t_opt, p_opt) = solve_pt_lp(pos, rhs, params);
    let target = inner_s - p_opt;

    let project = |mu: f64| -> DMatrix<f64> {
        let shifted = s - &d_sym * mu;
        if diagonal {
            DMatrix::from_diagonal(&shifted.diagonal().map(|v| v.clamp(t_opt, params.t_max)))
        } else {
            clip_spectrum(&shifted, t_opt, params.t_max)
        }
    };
    let gap = |x: &DMatrix<f64>| d_sym.dot(x) - target;
    let slack_tol = 1e-14 * (1.0 + target.abs() + d_sym.norm() * params.t_max);

    let mut x = project(0.0);
    if gap(&x) > slack_tol {
        let mut hi = 1.0 / d_sym.norm().max(1e-300);
        let mut lo = 0.0;
        let mut x_hi = project(hi);
        let mut doublings = 0;
        while gap(&x_hi) > slack_tol && doublings < 200 {
            lo = hi;
            hi *= 2.0;
            x_hi = project(hi);
            doublings += 1;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let x_mid = project(mid);
            if gap(&x_mid) > slack_tol {
                lo = mid;
            } else {
                hi = mid;
                x_hi = x_mid;
            }
        }
        x = x_hi;
    }

    let delta_s = symmetrize(&(&x - s));
    // p is read back from the matrix actually returned, so the descent row
    // holds with equality whenever the LP value was not reached exactly
    let achieved = -d_sym.dot(&delta_s);
    let p = achieved.min(p_opt).clamp(0.0, params.p_max);
    let result = SdpResult {
        delta_s,
        p,
        t: t_opt,
        status: SdpStatus::Optimal,
    };
    if result.delta_s.iter().any(|v| !v.is_finite()) {
        return SdpResult::failure(n);
    }
    if result.check_invariants(s, d, params).is_err() {
        return SdpResult { status: SdpStatus::NumericalFailure, ..result };
    }
    result
}

/// Maximizes `p + t` over `p + t * pos <= rhs`, `p in [0, p_max]`,
/// `t in [t_min, t_max]`. Ties go to the larger `t`.
fn solve_pt_lp(pos: f64, rhs: f64, params: &OfoParams) -> (f64, f64) {
    let t_hi = if pos > 0.0 {
        (rhs / pos).clamp(params.t_min, params.t_max)
    } else {
        params.t_max
    };
    let value = |t: f64| t + (rhs - t * pos).min(params.p_max).max(0.0);
    let mut candidates = vec![t_hi, params.t_min];
    if pos > 0.0 {
        let kink = (rhs - params.p_max) / pos;
        if kink > params.t_min && kink < t_hi {
            candidates.push(kink);
        }
    }
    candidates.sort_by(|a, b| b.total_cmp(a));
    let mut best = candidates[0];
    for &t in &candidates[1..] {
        if value(t) > value(best) + 1e-14 * (1.0 + value(best).abs()) {
            best = t;
        }
    }
    let p = (rhs - best * pos).min(params.p_max).max(0.0);
    (best, p)
}

/// Frobenius projection onto `{X : lo I <= X <= hi I}`.
pub fn clip_spectrum(x: &DMatrix<f64>, lo: f64, hi: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(x));
    let clipped = eig.eigenvalues.map(|v| v.clamp(lo, hi));
    let q = &eig.eigenvectors;
    symmetrize(&(q * DMatrix::from_diagonal(&clipped) * q.transpose()))
}

/// Multiplicative diagonal rule: grow by `1 + beta1` where the sensitivity is
/// negative, shrink by `1 - beta2` where it is positive, clamp to
/// `[t_min, t_max]`.
pub fn adapt_heuristic(s_diag: &DVector<f64>, d_diag: &DVector<f64>, params: &OfoParams) -> DVector<f64> {
    s_diag.zip_map(d_diag, |s, d| {
        let raw = if d < 0.0 {
            (1.0 + params.beta1) * s
        } else if d > 0.0 {
            (1.0 - params.beta2) * s
        } else {
            s
        };
        raw.clamp(params.t_min, params.t_max)
    })
}

/// The multiplicative rule with the rates set per entry to
/// `beta1 = -beta2 = D_i / S_i`, i.e. `S_i + D_i` in both branches.
///
/// Only meaningful for diagonal metrics: applied to one entry of a coupled
/// matrix it can leave the positive-definite cone.
pub fn adapt_ift_analogue(s_diag: &DVector<f64>, d_diag: &DVector<f64>, params: &OfoParams) -> DVector<f64> {
    s_diag.zip_map(d_diag, |s, d| {
        let rate = d / s;
        let raw = if d < 0.0 {
            (1.0 + rate) * s
        } else if d > 0.0 {
            (1.0 - (-rate)) * s
        } else {
            s
        };
        raw.clamp(params.t_min, params.t_max)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{spd_project_check, AdaptationMode};
    use approx::assert_relative_eq;

    fn params(n: usize, p_max: f64, t_max: f64) -> OfoParams {
        let mut p = OfoParams::new(DMatrix::identity(n, n), 0.01, t_max);
        p.p_max = p_max;
        p
    }

    fn sens(d: DMatrix<f64>) -> ScalingSensitivity {
        ScalingSensitivity { d }
    }

    #[test]
    fn zero_sensitivity_pins_to_t_max() {
        let prm = params(3, 1.0, 1000.0);
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.1, 0.0, 0.1, 3.0]);
        let r = adapt_sdp(&s, &ScalingSensitivity::zeros(3), &prm, false);
        assert!(r.is_optimal());
        assert_relative_eq!(r.t, 1000.0);
        assert_eq!(r.p, 0.0);
        let x = &s + &r.delta_s;
        assert!((x - DMatrix::identity(3, 3) * 1000.0).amax() < 1e-9);
    }

    #[test]
    fn scalar_positive_sensitivity_vertex() {
        // one-dimensional LP: enumerate vertices of {p + 5 t <= 5, 0 <= p <= 10, t in [1e-6, 1000]}
        let prm = params(1, 10.0, 1000.0);
        let s = DMatrix::from_element(1, 1, 1.0);
        let r = adapt_sdp(&s, &sens(DMatrix::from_element(1, 1, 5.0)), &prm, false);
        assert!(r.is_optimal());
        let vertices: [(f64, f64); 2] = [(1e-6, 5.0 * (1.0 - 1e-6)), (1.0, 0.0)];
        let best = vertices
            .iter()
            .copied()
            .max_by(|a, b| (a.0 + a.1).total_cmp(&(b.0 + b.1)))
            .unwrap();
        assert_relative_eq!(r.t, best.0, epsilon = 1e-15);
        assert_relative_eq!(r.p, best.1, epsilon = 1e-8);
        assert_relative_eq!(r.delta_s[(0, 0)], 1e-6 - 1.0, epsilon = 1e-9);
        for diag in [false, true] {
            let r2 = adapt_sdp(&s, &sens(DMatrix::from_element(1, 1, 5.0)), &prm, diag);
            assert_relative_eq!(r2.delta_s[(0, 0)], r.delta_s[(0, 0)], epsilon = 1e-12);
        }
    }

    #[test]
    fn negative_definite_sensitivity_grows_metric() {
        let prm = params(2, 1.0, 50.0);
        let s = DMatrix::identity(2, 2);
        let d = DMatrix::from_row_slice(2, 2, &[-0.3, 0.1, 0.1, -0.2]);
        let r = adapt_sdp(&s, &sens(d.clone()), &prm, false);
        assert!(r.is_optimal());
        r.check_invariants(&s, &sens(d), &prm).unwrap();
        assert_relative_eq!(r.t, 50.0);
        assert_relative_eq!(r.p, 1.0);
    }

    #[test]
    fn diagonal_mode_keeps_diagonal() {
        let prm = params(3, 10.0, 1000.0);
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![500.0, 200.0, 1000.0]));
        let d = DMatrix::from_row_slice(3, 3, &[0.4, 0.3, 0.0, 0.3, -0.01, 0.0, 0.0, 0.0, 2.0]);
        let r = adapt_sdp(&s, &sens(d.clone()), &prm, true);
        assert!(r.is_optimal());
        assert!(is_diagonal(&r.delta_s));
        r.check_invariants(&s, &sens(d.clone()), &prm).unwrap();
        // an entry only shrinks where its sensitivity is positive
        for i in 0..3 {
            if r.delta_s[(i, i)] < 0.0 {
                assert!(d[(i, i)] > 0.0);
            }
        }
        assert!(r.delta_s[(2, 2)] < 0.0);
    }

    #[test]
    fn diagonal_mode_rejects_full_metric() {
        let prm = params(2, 1.0, 10.0);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let r = adapt_sdp(&s, &ScalingSensitivity::zeros(2), &prm, true);
        assert_eq!(r.status, SdpStatus::NumericalFailure);
    }

    #[test]
    fn non_finite_sensitivity_fails() {
        let prm = params(2, 1.0, 10.0);
        let d = DMatrix::from_element(2, 2, f64::NAN);
        let r = adapt_sdp(&DMatrix::identity(2, 2), &sens(d), &prm, false);
        assert_eq!(r.status, SdpStatus::NumericalFailure);
    }

    #[test]
    fn heuristic_branches() {
        let mut prm = params(3, 10.0, 1000.0);
        prm.beta1 = 0.1;
        prm.beta2 = 0.2;
        prm.mode = AdaptationMode::HeuristicDiagonal;
        let s = DVector::from_vec(vec![1000.0, 1000.0, 3.0]);
        let d = DVector::from_vec(vec![0.5, -0.5, 0.0]);
        let out = adapt_heuristic(&s, &d, &prm);
        assert_relative_eq!(out[0], 800.0, epsilon = 1e-12);
        assert_eq!(out[1], 1000.0);
        assert_eq!(out[2], 3.0);
        let low = adapt_heuristic(&DVector::from_vec(vec![1e-6]), &DVector::from_vec(vec![1.0]), &prm);
        assert_eq!(low[0], 1e-6);
    }

    #[test]
    fn ift_analogue_substitution() {
        let prm = params(2, 1.0, 1000.0);
        let out = adapt_ift_analogue(&DVector::from_vec(vec![1.0, 2.0]), &DVector::from_vec(vec![-0.5, 0.0]), &prm);
        assert_relative_eq!(out[0], 0.5, epsilon = 1e-15);
        assert_eq!(out[1], 2.0);
    }

    #[test]
    fn single_entry_update_of_coupled_metric_leaves_cone() {
        let s = DMatrix::from_row_slice(2, 2, &[0.11, -0.1, -0.1, 0.1]);
        assert!(spd_project_check(&s, 1e-6));
        let mut next = s.clone();
        next[(0, 0)] *= 0.9;
        let e = sym_eigenvalues(&next);
        assert_relative_eq!(e[0], -0.0005, epsilon = 1e-4);
        assert_relative_eq!(e[1], 0.1995, epsilon = 1e-4);
        assert!(!spd_project_check(&next, 1e-6));
    }

    proptest::proptest! {
        #[test]
        fn heuristic_stays_in_bounds_and_is_monotone(
            s1 in 1e-6f64..1000.0, s2 in 1e-6f64..1000.0, d in -5.0f64..5.0,
        ) {
            let prm = params(1, 1.0, 1000.0);
            let dd = DVector::from_vec(vec![d]);
            let a = adapt_heuristic(&DVector::from_vec(vec![s1.min(s2)]), &dd, &prm)[0];
            let b = adapt_heuristic(&DVector::from_vec(vec![s1.max(s2)]), &dd, &prm)[0];
            proptest::prop_assert!((1e-6..=1000.0).contains(&a));
            proptest::prop_assert!((1e-6..=1000.0).contains(&b));
            proptest::prop_assert!(a <= b);
        }

        #[test]
        fn sdp_descent_row_nonpositive(
            a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0,
            s1 in 0.5f64..20.0, s2 in 0.5f64..20.0,
        ) {
            let prm = params(2, 1.0, 50.0);
            let s = DMatrix::from_row_slice(2, 2, &[s1, 0.1, 0.1, s2]);
            let d = sens(DMatrix::from_row_slice(2, 2, &[a, b, b, c]));
            let r = adapt_sdp(&s, &d, &prm, false);
            proptest::prop_assert!(r.is_optimal());
            proptest::prop_assert!(d.d.dot(&r.delta_s) <= 1e-8);
            proptest::prop_assert!(r.check_invariants(&s, &d, &prm).is_ok());
        }
    }
}
