use std::sync::Arc;

use fbm_ergodic::density::{kde_states, Grid, KernelMode, KernelSpec};
use fbm_ergodic::ergodic::{
    evaluate_functional, marginal_occupation, marginal_occupation_from, window_occupation, MarginalOccupation,
};
use fbm_ergodic::euler::{run_euler, simulate, EulerConfig};
use fbm_ergodic::fgn::{generate_fgn, FgnConfig};
use fbm_ergodic::model::builtin_toy_model;
use fbm_ergodic::pathspace::{
    holder_modulus, holder_seminorm, p_variation, young_discrete_integral, PathView, SampledPath,
};
use proptest::prelude::*;

fn values(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 2..=max_len)
}

/// Max of `Σ|Δ|^p` over all subdivisions, by subset enumeration.
fn brute_force_p_variation(xs: &[f64], p: f64) -> f64 {
    let interior = xs.len() - 2;
    let mut best = 0.0f64;
    for mask in 0u32..(1 << interior) {
        let mut prev = 0;
        let mut sum = 0.0;
        for i in 1..xs.len() {
            let keep = i == xs.len() - 1 || mask & (1 << (i - 1)) != 0;
            if keep {
                sum += (xs[i] - xs[prev]).abs().powf(p);
                prev = i;
            }
        }
        best = best.max(sum);
    }
    best.powf(1.0 / p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn holder_seminorm_is_monotone_in_the_interval(
        xs in values(60),
        theta in 0.05f64..1.0,
        cut in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
    ) {
        let n = xs.len();
        let path = SampledPath::uniform(0.0, 0.1, xs, 1).unwrap();
        let end = 0.1 * (n - 1) as f64;
        let mut pts = [cut.0 * end, cut.1 * end, cut.2 * end, cut.3 * end];
        pts.sort_by(f64::total_cmp);
        let outer = holder_seminorm(&path, theta, pts[0], pts[3]).unwrap();
        let inner = holder_seminorm(&path, theta, pts[1], pts[2]).unwrap();
        prop_assert!(inner.seminorm <= outer.seminorm);
    }

    #[test]
    fn holder_modulus_nondecreasing_and_reaches_seminorm(xs in values(50), theta in 0.1f64..1.0, d in 0.0f64..1.0) {
        let n = xs.len();
        let path = SampledPath::uniform(0.0, 0.1, xs, 1).unwrap();
        let horizon = 0.1 * (n - 1) as f64;
        let small = holder_modulus(&path, theta, horizon, d * horizon).unwrap();
        let large = holder_modulus(&path, theta, horizon, (d + 0.5).min(1.0) * horizon).unwrap();
        prop_assert!(small <= large);
        let full = holder_modulus(&path, theta, horizon, horizon).unwrap();
        let norm = holder_seminorm(&path, theta, 0.0, horizon).unwrap().seminorm;
        prop_assert!((full - norm).abs() <= 1e-12 * norm.max(1.0));
    }

    #[test]
    fn p_variation_matches_brute_force(xs in values(10), p in 1.0f64..4.0) {
        let path = SampledPath::uniform(0.0, 1.0, xs.clone(), 1).unwrap();
        let end = (xs.len() - 1) as f64;
        let dp = p_variation(&path, p, 0.0, end).unwrap();
        let brute = brute_force_p_variation(&xs, p);
        prop_assert!((dp - brute).abs() <= 1e-10 * brute.max(1.0), "{dp} vs {brute}");
    }

    #[test]
    fn p_variation_nonincreasing_in_p(xs in values(40), p in 1.0f64..5.0, dp in 0.0f64..3.0) {
        let path = SampledPath::uniform(0.0, 1.0, xs.clone(), 1).unwrap();
        let end = (xs.len() - 1) as f64;
        let a = p_variation(&path, p, 0.0, end).unwrap();
        let b = p_variation(&path, p + dp, 0.0, end).unwrap();
        prop_assert!(b <= a * (1.0 + 1e-12));
    }

    #[test]
    fn young_sum_with_constant_integrand_is_gamma_independent(
        incs in prop::collection::vec(-1.0f64..1.0, 64),
        c in -5.0f64..5.0,
        level in 0usize..4,
    ) {
        // Driver on a step-1/64 grid; coarser sums use every 2^level-th sample.
        let mut beta = vec![0.0];
        for d in &incs {
            beta.push(beta.last().unwrap() + d);
        }
        let fine = PathView::uniform(0.0, 1.0 / 64.0, &beta, 1).unwrap();
        let stride = 1usize << level;
        let coarse_vals: Vec<f64> = beta.iter().step_by(stride).copied().collect();
        let coarse = PathView::uniform(0.0, stride as f64 / 64.0, &coarse_vals, 1).unwrap();
        let consts_fine = vec![c; beta.len()];
        let consts_coarse = vec![c; coarse_vals.len()];
        let f_fine = PathView::uniform(0.0, 1.0 / 64.0, &consts_fine, 1).unwrap();
        let f_coarse = PathView::uniform(0.0, stride as f64 / 64.0, &consts_coarse, 1).unwrap();
        let a = young_discrete_integral(f_fine, fine, 1.0 / 64.0, 1.0).unwrap()[0];
        let b = young_discrete_integral(f_coarse, coarse, stride as f64 / 64.0, 1.0).unwrap()[0];
        let exact = c * beta[64];
        prop_assert!((a - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
        prop_assert!((b - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
    }

    #[test]
    fn kde_translation_equivariance(
        xs in prop::collection::vec(-3.0f64..3.0, 1..200),
        shift in -20.0f64..20.0,
        h in 0.01f64..1.0,
    ) {
        let grid = Grid::symmetric(8.0, 129).unwrap();
        let k = KernelSpec::new(h, KernelMode::Variance).unwrap();
        let base = kde_states(&xs, k, grid).unwrap();
        let moved: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        let est = kde_states(&moved, k, grid.shifted(shift)).unwrap();
        let peak = base.values.iter().copied().fold(0.0, f64::max);
        for (a, b) in base.values.iter().zip(&est.values) {
            prop_assert!((a - b).abs() <= 1e-9 * peak);
        }
    }

    #[test]
    fn functional_average_is_linear_and_permutation_invariant(
        xs in prop::collection::vec(-5.0f64..5.0, 1..300),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        rot in 0usize..300,
    ) {
        let m = MarginalOccupation::from_states(&xs, 1, 0.1).unwrap();
        let f = |x: &[f64]| x[0].sin();
        let g = |x: &[f64]| x[0] * x[0];
        let lhs = evaluate_functional(&m, |x: &[f64]| a * f(x) + b * g(x)).unwrap().value;
        let rhs = a * evaluate_functional(&m, f).unwrap().value + b * evaluate_functional(&m, g).unwrap().value;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        let mut ys = xs.clone();
        ys.rotate_left(rot % xs.len());
        ys.reverse();
        let p = MarginalOccupation::from_states(&ys, 1, 0.1).unwrap();
        let perm = evaluate_functional(&p, f).unwrap().value;
        let orig = evaluate_functional(&m, f).unwrap().value;
        prop_assert!((perm - orig).abs() <= 1e-13);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn euler_flow_property(n1 in 1usize..200, n2 in 1usize..200, seed in 0u64..1000, x0 in -5.0f64..5.0) {
        let (model, _) = builtin_toy_model();
        let gamma = 0.05;
        let noise = generate_fgn(FgnConfig::new(0.75, gamma, n1 + n2, seed).unwrap(), 1).unwrap();
        let whole = run_euler(&model, &EulerConfig::new(gamma, n1 + n2, vec![x0]), Arc::new(noise.clone())).unwrap();
        let first = run_euler(&model, &EulerConfig::new(gamma, n1, vec![x0]), Arc::new(noise.slice(0, n1).unwrap())).unwrap();
        let mid = first.stored(n1).to_vec();
        let second = run_euler(&model, &EulerConfig::new(gamma, n2, mid), Arc::new(noise.slice(n1, n2).unwrap())).unwrap();
        for k in 0..=n2 {
            prop_assert_eq!(whole.stored(n1 + k), second.stored(k));
        }
    }

    #[test]
    fn marginal_is_time_zero_of_windows(seed in 0u64..1000, n in 1usize..300, horizon in 0.0f64..5.0) {
        let (model, _) = builtin_toy_model();
        let t = simulate(&model, &EulerConfig::new(0.05, 500, vec![0.3]), 0.75, seed).unwrap();
        let w = window_occupation(&t, n, horizon).unwrap();
        let m = marginal_occupation(&t, n).unwrap();
        prop_assert_eq!(w.marginal().states(), m.states());
        for k in (0..n).step_by(17) {
            prop_assert_eq!(w.window(k).value(0), m.state(k));
        }
    }

    #[test]
    fn shift_consistency(seed in 0u64..1000, n in 2usize..400) {
        let (model, _) = builtin_toy_model();
        let t = simulate(&model, &EulerConfig::new(0.05, 500, vec![0.0]), 0.75, seed).unwrap();
        let f = |x: &[f64]| x[0].tanh();
        let a = evaluate_functional(&marginal_occupation(&t, n).unwrap(), f).unwrap().value;
        let b = evaluate_functional(&marginal_occupation_from(&t, 1, n).unwrap(), f).unwrap().value;
        prop_assert!((a - b).abs() <= 2.0 / n as f64 + 1e-12);
    }
}

#[test]
fn euler_runs_are_bitwise_deterministic() {
    let (model, _) = builtin_toy_model();
    let cfg = EulerConfig::new(0.02, 5000, vec![1.0]);
    let a = simulate(&model, &cfg, 0.75, 42).unwrap();
    let b = simulate(&model, &cfg, 0.75, 42).unwrap();
    let bits = |t: &fbm_ergodic::Trajectory| t.states().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}
