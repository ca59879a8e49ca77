//! Random instance generators shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saver_core::env::{ActionSpec, Gaussian, LayeredMdp, StateSpec, TargetPolicy};

pub const MAX_STATES: usize = 15;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_gaussian(rng: &mut impl Rng) -> Gaussian {
    let std = if rng.random_bool(0.15) {
        0.0
    } else {
        rng.random_range(0.0..2.0)
    };
    Gaussian::new(rng.random_range(0.0..1.0), std)
}

fn try_tree(rng: &mut impl Rng, levels: usize) -> Option<Vec<StateSpec>> {
    let mut states: Vec<StateSpec> = vec![StateSpec {
        level: 1,
        actions: Vec::new(),
    }];
    let mut frontier = vec![0usize];
    for level in 1..=levels {
        let mut next_frontier = Vec::new();
        for &s in &frontier {
            let num_actions = rng.random_range(1..=3);
            for _ in 0..num_actions {
                let mut next = Vec::new();
                if level < levels {
                    let children = if rng.random_bool(0.25) { 2 } else { 1 };
                    let split = rng.random_range(0.1..0.9);
                    for c in 0..children {
                        let id = states.len();
                        states.push(StateSpec {
                            level: level + 1,
                            actions: Vec::new(),
                        });
                        next_frontier.push(id);
                        let p = match (children, c) {
                            (1, _) => 1.0,
                            (_, 0) => split,
                            _ => 1.0 - split,
                        };
                        next.push((id, p));
                    }
                    if states.len() > MAX_STATES {
                        return None;
                    }
                }
                states[s].actions.push(ActionSpec {
                    reward: random_gaussian(rng),
                    cost: random_gaussian(rng),
                    next,
                });
            }
        }
        frontier = next_frontier;
    }
    Some(states)
}

/// Tree with at most [`MAX_STATES`] states and at most 4 levels.
pub fn random_tree(rng: &mut impl Rng) -> LayeredMdp {
    loop {
        let levels = rng.random_range(1..=4);
        if let Some(states) = try_tree(rng, levels) {
            let gamma = rng.random_range(0.5..=1.0);
            return LayeredMdp::new(states, gamma, 1.0).expect("generated tree is valid");
        }
    }
}

/// Random rows, with roughly one action in five left out of the support.
pub fn random_policy(mdp: &LayeredMdp, rng: &mut impl Rng) -> TargetPolicy {
    let rows = (0..mdp.num_states())
        .map(|s| {
            let k = mdp.num_actions(s);
            let mut row: Vec<f64> = (0..k)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        0.0
                    } else {
                        rng.random_range(0.05..1.0)
                    }
                })
                .collect();
            if row.iter().all(|&p| p == 0.0) {
                row[0] = 1.0;
            }
            let total: f64 = row.iter().sum();
            row.iter().map(|p| p / total).collect()
        })
        .collect();
    TargetPolicy::new(mdp, rows).expect("normalized rows")
}

/// `E[sum_l gamma^(l-1) mean(S_l, A_l)]` summed over every complete
/// trajectory from the root, each weighted by its probability.
pub fn enumerate_value(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    mean: &impl Fn(usize, usize) -> f64,
) -> f64 {
    let mut total = 0.0;
    walk(mdp, policy, mean, mdp.root(), 1.0, 0.0, 1.0, &mut total);
    total
}

#[allow(clippy::too_many_arguments)]
fn walk(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    mean: &impl Fn(usize, usize) -> f64,
    state: usize,
    prob: f64,
    ret: f64,
    discount: f64,
    total: &mut f64,
) {
    for (a, &p) in policy.row(state).iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let ret = ret + discount * mean(state, a);
        let next = mdp.transitions(state, a);
        if next.is_empty() {
            *total += prob * p * ret;
        }
        for &(s2, q) in next {
            walk(
                mdp,
                policy,
                mean,
                s2,
                prob * p * q,
                ret,
                discount * mdp.gamma(),
                total,
            );
        }
    }
}
