mod common;

use common::{random_spd, random_symmetric, rng, sdp_random_probe, sdp_witness_value};
use nalgebra::{DMatrix, DVector};
use ofo_core::model::{is_diagonal, sym_eigenvalues, OfoParams, ScalingSensitivity};
use ofo_core::scaling::{adapt_heuristic, adapt_sdp};
use proptest::prelude::*;
use rand::Rng;

fn params(n: usize, t_max: f64, p_max: f64) -> OfoParams {
    let mut p = OfoParams::new(DMatrix::identity(n, n), 1.0, t_max);
    p.p_max = p_max;
    p
}

#[test]
fn full_metric_is_optimal_against_witnesses_and_probes() {
    let mut r = rng(21);
    for case in 0..100 {
        let n = [2, 3, 5][case % 3];
        let t_max = r.random_range(1.0..20.0);
        let prm = params(n, t_max, r.random_range(0.1..5.0));
        let s = random_spd(&mut r, n, 1e-3, t_max);
        let scale = 10f64.powf(r.random_range(-3.0..1.0));
        let d = random_symmetric(&mut r, n, scale);
        let res = adapt_sdp(&s, &ScalingSensitivity { d: d.clone() }, &prm, false);
        assert!(res.is_optimal(), "case {case}: {:?}", res.status);
        res.check_invariants(&s, &ScalingSensitivity { d: d.clone() }, &prm).unwrap();
        let value = res.p + res.t;
        let tol = 1e-6 * (1.0 + value.abs());
        let witness = sdp_witness_value(&s, &d, &prm, false);
        assert!(witness <= value + tol, "case {case}: witness {witness} beats {value}");
        // the grid witness should come close from below
        assert!(witness >= value - 1e-2 * (1.0 + value), "case {case}: witness {witness} far below {value}");
        let probe = sdp_random_probe(&mut r, &s, &d, &prm, false, 500);
        assert!(probe <= value + tol, "case {case}: probe {probe} beats {value}");
    }
}

#[test]
fn diagonal_metric_is_optimal_and_stays_diagonal() {
    let mut r = rng(22);
    for case in 0..100 {
        let n = [2, 3, 5][case % 3];
        let t_max = r.random_range(1.0..20.0);
        let prm = params(n, t_max, r.random_range(0.1..5.0));
        let s = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| r.random_range(1e-3..t_max)));
        let scale = 10f64.powf(r.random_range(-3.0..1.0));
        let d = random_symmetric(&mut r, n, scale);
        let sens = ScalingSensitivity { d: d.clone() };
        let res = adapt_sdp(&s, &sens, &prm, true);
        assert!(res.is_optimal(), "case {case}");
        assert!(is_diagonal(&(&s + &res.delta_s)));
        let value = res.p + res.t;
        let tol = 1e-6 * (1.0 + value.abs());
        assert!(sdp_witness_value(&s, &d, &prm, true) <= value + tol);
        assert!(sdp_random_probe(&mut r, &s, &d, &prm, true, 500) <= value + tol);
    }
}

#[test]
fn zero_sensitivity_moves_to_upper_bound() {
    let mut r = rng(23);
    for n in [2, 3, 5] {
        let prm = params(n, 7.5, 1.0);
        let s = random_spd(&mut r, n, 0.5, 7.0);
        let res = adapt_sdp(&s, &ScalingSensitivity::zeros(n), &prm, false);
        assert!(res.is_optimal());
        assert_eq!(res.p, 0.0);
        let next = &s + &res.delta_s;
        assert!((next - DMatrix::identity(n, n) * 7.5).amax() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sdp_result_respects_bounds(seed in any::<u64>(), n in 1usize..6, diagonal in any::<bool>()) {
        let mut r = rng(seed);
        let prm = params(n, 10.0, 1.0);
        let s = if diagonal {
            DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| r.random_range(0.01..10.0)))
        } else {
            random_spd(&mut r, n, 0.01, 10.0)
        };
        let d = random_symmetric(&mut r, n, 1.0);
        let sens = ScalingSensitivity { d };
        let res = adapt_sdp(&s, &sens, &prm, diagonal);
        prop_assert!(res.is_optimal());
        let eigs = sym_eigenvalues(&(&s + &res.delta_s));
        prop_assert!(eigs.min() >= prm.t_min - 1e-8);
        prop_assert!(eigs.max() <= prm.t_max + 1e-8);
        prop_assert!((&res.delta_s - res.delta_s.transpose()).amax() <= 1e-12);
        prop_assert!(res.p >= 0.0 && res.p <= prm.p_max);
    }

    #[test]
    fn heuristic_moves_against_sensitivity_sign(
        s in prop::collection::vec(1e-3f64..10.0, 1..6),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let n = s.len();
        let s = DVector::from_vec(s);
        let d = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let prm = params(n, 10.0, 1.0);
        let next = adapt_heuristic(&s, &d, &prm);
        for i in 0..n {
            prop_assert!(next[i] >= prm.t_min && next[i] <= prm.t_max);
            if d[i] < 0.0 {
                prop_assert!(next[i] >= s[i]);
            } else if d[i] > 0.0 {
                prop_assert!(next[i] <= s[i]);
            }
        }
    }
}
