use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

use gepower_core::analysis::permutations;
use gepower_core::grid::{build_grid, ValueFunction};
use gepower_core::model::{
    enumerate_actions, immediate_reward, propagate_belief, propagate_belief_n, reference_spec,
    successor_outcomes, Action, Belief, ChannelParams,
};
use gepower_core::solver::{bellman_backup, q_value, value_iterate};

fn channel() -> impl Strategy<Value = ChannelParams> {
    (0.0..0.99f64, 0.0..1.0f64).prop_map(|(l0, t)| ChannelParams {
        lambda0: l0,
        lambda1: l0 + t * (1.0 - l0),
    })
}

fn belief3() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0..=1.0f64, 3)
}

fn action3() -> impl Strategy<Value = Action> {
    (0u32..8).prop_map(|m| Action::new(3, m))
}

proptest! {
    #[test]
    fn propagation_is_affine(params in channel(), x in 0.0..=1.0f64, y in 0.0..=1.0f64, w in 0.0..=1.0f64) {
        let mix = propagate_belief(&params, w * x + (1.0 - w) * y).unwrap();
        let sep = w * propagate_belief(&params, x).unwrap() + (1.0 - w) * propagate_belief(&params, y).unwrap();
        assert_abs_diff_eq!(mix, sep, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_matches_repeated_propagation(params in channel(), p in 0.0..=1.0f64, n in 0u32..30) {
        let mut q = p;
        for _ in 0..n {
            q = propagate_belief(&params, q).unwrap();
        }
        assert_abs_diff_eq!(propagate_belief_n(&params, p, n).unwrap(), q, epsilon = 1e-10);
    }

    #[test]
    fn reward_is_affine_in_each_coordinate(p in belief3(), a in action3(), j in 0usize..3, x in 0.0..=1.0f64, y in 0.0..=1.0f64) {
        let spec = reference_spec();
        let at = |v: f64| {
            let mut q = p.clone();
            q[j] = v;
            immediate_reward(&spec, a, &q)
        };
        assert_abs_diff_eq!(at(0.5 * (x + y)), 0.5 * (at(x) + at(y)), epsilon = 1e-12);
    }

    #[test]
    fn outcome_probabilities_sum_to_one(params in channel(), p in belief3(), a in action3()) {
        let dist = successor_outcomes(&params, a, &Belief::new(p).unwrap()).unwrap();
        prop_assert_eq!(dist.outcomes.len(), 1 << a.cardinality());
        assert_abs_diff_eq!(dist.total_probability(), 1.0, epsilon = 1e-12);
        for o in &dist.outcomes {
            prop_assert!(o.belief.coords().iter().all(|&b| (0.0..=1.0).contains(&b)));
        }
    }

    #[test]
    fn reward_is_permutation_invariant(p in belief3(), a in action3(), k in 0usize..6) {
        let spec = reference_spec();
        let perm = &permutations(3)[k];
        let b = Belief::new(p.clone()).unwrap();
        let lhs = immediate_reward(&spec, a.permuted(perm), b.permuted(perm).coords());
        assert_abs_diff_eq!(lhs, immediate_reward(&spec, a, &p), epsilon = 1e-12);
    }
}

fn field_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    let len = 11usize.pow(3);
    (
        proptest::collection::vec(-50.0..50.0f64, len),
        proptest::collection::vec(-50.0..50.0f64, len),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bellman_operator_contracts((a, b) in field_pair()) {
        let spec = reference_spec();
        let grid = build_grid(&spec, 11).unwrap();
        let va = ValueFunction::new(grid.clone(), a).unwrap();
        let vb = ValueFunction::new(grid, b).unwrap();
        let (ta, _) = bellman_backup(&spec, &va).unwrap();
        let (tb, _) = bellman_backup(&spec, &vb).unwrap();
        let before = va.max_abs_diff(&vb).unwrap();
        let after = ta.max_abs_diff(&tb).unwrap();
        prop_assert!(after <= spec.beta * before + 1e-9, "{after} > {} * {before}", spec.beta);
    }

    #[test]
    fn bellman_operator_is_monotone((a, d) in field_pair()) {
        let spec = reference_spec();
        let grid = build_grid(&spec, 11).unwrap();
        let upper: Vec<f64> = a.iter().zip(&d).map(|(x, y)| x + y.abs()).collect();
        let lo = ValueFunction::new(grid.clone(), a).unwrap();
        let hi = ValueFunction::new(grid, upper).unwrap();
        let (tl, _) = bellman_backup(&spec, &lo).unwrap();
        let (th, _) = bellman_backup(&spec, &hi).unwrap();
        for (l, h) in tl.values.iter().zip(&th.values) {
            prop_assert!(l <= &(h + 1e-12));
        }
    }
}

#[test]
fn q_is_affine_in_used_coordinates() {
    let spec = reference_spec();
    let grid = build_grid(&spec, 11).unwrap();
    let (v, _) = value_iterate(&spec, &grid, 1e-8).unwrap();
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = (belief3(), 0usize..3, 0.0..=1.0f64);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (p, j, x) = strategy.new_tree(&mut runner).unwrap().current();
        for a in enumerate_actions(3).into_iter().filter(|a| a.uses(j)) {
            let q = |t: f64| {
                let mut c = p.clone();
                c[j] = t;
                q_value(&spec, &v, &Belief::new(c).unwrap(), a).unwrap()
            };
            let line = (1.0 - x) * q(0.0) + x * q(1.0);
            worst = worst.max((q(x) - line).abs());
        }
    }
    assert!(worst <= 1e-9, "collinearity defect {worst}");
}
