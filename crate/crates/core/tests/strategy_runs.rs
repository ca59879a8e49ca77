mod common;

use proptest::prelude::*;
use saver_core::env::{TargetPolicy, Topology};
use saver_core::estimator::{WidthMode, WidthParams};
use saver_core::harness::{pair_streams, stream_rng, Role};
use saver_core::strategies::{
    exploration_horizon, simulate, track_row, Problem, StrategyError, StrategyKind,
    StrategySettings,
};

use common::{random_policy, random_tree, rng};

fn settings(problem: &Problem, mode: WidthMode, inject_sigma: bool) -> StrategySettings {
    StrategySettings {
        alpha: 0.25,
        width: WidthParams::for_mdp(&problem.mdp, mode, 0.05, 0),
        inject_sigma,
        record_actions: true,
    }
}

fn run(
    problem: &Problem,
    kind: StrategyKind,
    settings: &StrategySettings,
    n: u64,
    seed: u64,
) -> saver_core::strategies::RunOutcome {
    let mut noise = pair_streams(&problem.mdp, seed, 0, 0);
    let mut behavior = stream_rng(seed, 0, 0, Role::Behavior);
    simulate(problem, kind, settings, n, &mut noise, &mut behavior).unwrap()
}

fn random_problem(seed: u64) -> Problem {
    let mut r = rng(seed);
    loop {
        let mdp = random_tree(&mut r);
        let positive_baseline = (0..mdp.num_states()).all(|s| mdp.action(s, 0).cost.mean > 0.05);
        if positive_baseline {
            let policy = random_policy(&mdp, &mut r);
            return Problem::new(mdp, policy, Topology::Tree).unwrap();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tracking_picks_the_largest_deficit(row in prop::collection::vec(0.0f64..1.0, 1..8), counts in prop::collection::vec(0u64..50, 8)) {
        let counts = &counts[..row.len()];
        let pick = track_row(&row, counts);
        let score = |a: usize| match (row[a] > 0.0, counts[a]) {
            (true, 0) => f64::INFINITY,
            (false, 0) => 0.0,
            (_, t) => row[a] / t as f64,
        };
        for a in 0..row.len() {
            prop_assert!(score(a) <= score(pick));
            if a < pick {
                prop_assert!(score(a) < score(pick));
            }
        }
    }

    #[test]
    fn exploration_horizon_is_ceil_sqrt(k in 0u64..1_000_000) {
        let h = exploration_horizon(k);
        prop_assert!(h * h >= k);
        prop_assert!(h == 0 || (h - 1) * (h - 1) < k);
    }

    #[test]
    fn zero_width_saver_replays_safe_oracle(seed in any::<u64>()) {
        let problem = random_problem(seed);
        let s = settings(&problem, WidthMode::Zero, true);
        let n = 60 * problem.mdp.num_levels() as u64;
        // On a single state the safe oracle plays the round-level rule.
        let tracker = if problem.is_bandit() { StrategyKind::BanditSaver } else { StrategyKind::Saver };
        let a = run(&problem, tracker, &s, n, seed);
        let b = run(&problem, StrategyKind::SafeOracle, &s, n, seed);
        prop_assert_eq!(a.actions, b.actions);
        prop_assert_eq!(a.budget_trace, b.budget_trace);
    }

    #[test]
    fn runs_use_the_whole_budget(seed in any::<u64>(), kind_index in 0usize..StrategyKind::ALL.len()) {
        let kind = StrategyKind::ALL[kind_index];
        prop_assume!(kind != StrategyKind::BanditSaver);
        let problem = random_problem(seed);
        let s = settings(&problem, WidthMode::Appendix, false);
        let n = 30 * problem.mdp.num_levels() as u64;
        let out = run(&problem, kind, &s, n, seed);
        prop_assert_eq!(out.actions.len() as u64, n);
        prop_assert!(out.sq_error.is_finite() && out.sq_error >= 0.0);
        prop_assert!(out.violations <= n);
    }
}

#[test]
fn baseline_only_never_leaves_action_zero() {
    let problem = random_problem(5);
    let s = settings(&problem, WidthMode::Appendix, false);
    let n = 20 * problem.mdp.num_levels() as u64;
    let out = run(&problem, StrategyKind::BaselineOnly, &s, n, 5);
    assert!(out.actions.iter().all(|&a| a == 0));
    assert!(out.constraint_ok);
}

#[test]
fn budgets_must_fill_whole_episodes() {
    let problem = (0..)
        .map(random_problem)
        .find(|p| p.mdp.num_levels() > 1)
        .expect("some seed yields a deep tree");
    let s = settings(&problem, WidthMode::Appendix, false);
    let mut noise = pair_streams(&problem.mdp, 0, 0, 0);
    let mut behavior = stream_rng(0, 0, 0, Role::Behavior);
    let n = problem.mdp.num_levels() as u64 + 1;
    let err = simulate(
        &problem,
        StrategyKind::OnPolicy,
        &s,
        n,
        &mut noise,
        &mut behavior,
    )
    .unwrap_err();
    assert!(matches!(err, StrategyError::BudgetNotDivisible { .. }));
    let err = simulate(
        &problem,
        StrategyKind::BanditSaver,
        &s,
        problem.mdp.num_levels() as u64,
        &mut noise,
        &mut behavior,
    )
    .unwrap_err();
    assert!(matches!(err, StrategyError::NotABandit(_)));
}

#[test]
fn oracle_matches_target_on_deterministic_rewards() {
    let mut problem = random_problem(8);
    let states: Vec<_> = problem
        .mdp
        .state_specs()
        .iter()
        .map(|st| {
            let mut st = st.clone();
            for a in &mut st.actions {
                a.reward.std = 0.0;
            }
            st
        })
        .collect();
    let mdp =
        saver_core::env::LayeredMdp::new(states, problem.mdp.gamma(), problem.mdp.eta()).unwrap();
    let policy = TargetPolicy::new(&mdp, problem.policy.rows().to_vec()).unwrap();
    problem = Problem::new(mdp, policy, Topology::Tree).unwrap();
    let s = settings(&problem, WidthMode::Appendix, false);
    let n = 400 * problem.mdp.num_levels() as u64;
    let out = run(&problem, StrategyKind::OracleUnconstrained, &s, n, 8);
    // Every pair in the policy support is visited, so the plug-in value is exact.
    assert!(out.sq_error < 1e-20, "{}", out.sq_error);
}
