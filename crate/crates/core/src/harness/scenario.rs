//! Built-in experiment instances.
//!
//! Values the source experiments leave open are fixed here:
//!
//! - `intractable_bandit`: reward means `(0.4, 0.6, 0.5)`; the listed spreads
//!   are used as standard deviations, so `b* = (1, 1, 250) / 252`.
//! - `bandit11`: twelve arms `0..=11`; arms `2..=11` have reward means evenly
//!   spaced over `[0.02, 0.03]` and share the remaining target mass `0.2`
//!   (`0.02` each). Cost means equal reward means, deterministic. Risk
//!   level `alpha = 0.5`.
//! - `tree4x2`: state `s` reaches `2s + 1 + a` through action `a`. Reward
//!   means `0.2 + 0.04 s + 0.1 a`. Cost means `0.5` for the low-variance
//!   action and `0.8` for the high-variance one.
//! - `grid4x4`: 4x4 grid unrolled over 4 steps, so level `t` holds the cells
//!   within Manhattan distance `t - 1` of the top-left start (20 states).
//!   Actions `R, D, L, U` (right is the baseline). The intended move
//!   succeeds with probability 0.8, otherwise the agent stays; moves into a
//!   wall stay. Reward means `0.1 + 0.1 (row + col) + 0.05 a`; cost means
//!   `0.4` for R/D and `0.8` for L/U. L/U reward variance defaults to 20;
//!   `grid_low_variance` switches it to 0.01.
//!
//! The defaults shrink the radius used in cost lower bounds
//! (`cost_width_scale`): with the unscaled constants every safe strategy
//! spends the whole desk-scale budget on the baseline. The radius added to
//! reward deviations is left at full size.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::env::{ActionSpec, Gaussian, LayeredMdp, StateSpec, TargetPolicy, Topology};
use crate::strategies::StrategyKind;

pub const SCENARIO_IDS: [&str; 4] = ["intractable_bandit", "bandit11", "tree4x2", "grid4x4"];

pub fn scenario_ids() -> &'static [&'static str] {
    &SCENARIO_IDS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOptions {
    /// Use variance 0.01 instead of 20 for the grid's L/U actions.
    #[serde(default)]
    pub grid_low_variance: bool,
    /// Multiplier on the reward spreads of `intractable_bandit`.
    #[serde(default = "one")]
    pub noise_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            grid_low_variance: false,
            noise_scale: 1.0,
        }
    }
}

/// Run parameters a scenario suggests when the config leaves them out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDefaults {
    pub budgets: Vec<u64>,
    pub repetitions: usize,
    pub delta: f64,
    /// Multiplier on the cost lower-confidence radius.
    pub cost_width_scale: f64,
    pub strategies: Vec<StrategyKind>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub mdp: LayeredMdp,
    pub policy: TargetPolicy,
    pub topology: Topology,
    pub alpha: f64,
    pub defaults: ScenarioDefaults,
}

const GRID: [u64; 5] = [500, 1000, 2000, 4000, 8000];
const BANDIT_WIDTH_SCALE: f64 = 0.02;
const MDP_WIDTH_SCALE: f64 = 0.02;

fn defaults(topology: Topology, cost_width_scale: f64) -> ScenarioDefaults {
    let tracker = match topology {
        Topology::Bandit => StrategyKind::BanditSaver,
        Topology::Tree | Topology::Dag => StrategyKind::Saver,
    };
    ScenarioDefaults {
        budgets: GRID.to_vec(),
        repetitions: 200,
        delta: 0.05,
        cost_width_scale,
        strategies: vec![
            StrategyKind::OnPolicy,
            StrategyKind::OracleUnconstrained,
            StrategyKind::SafeOracle,
            tracker,
        ],
    }
}

pub fn scenario(id: &str, options: &ScenarioOptions) -> Result<Scenario, HarnessError> {
    let built = match id {
        "intractable_bandit" => intractable_bandit(options.noise_scale),
        "bandit11" => bandit11(),
        "tree4x2" => tree4x2(),
        "grid4x4" => grid4x4(options.grid_low_variance),
        other => return Err(HarnessError::UnknownScenario(other.to_string())),
    }?;
    built.mdp.validate(built.topology)?;
    Ok(built)
}

fn intractable_bandit(scale: f64) -> Result<Scenario, HarnessError> {
    let alpha = 0.25;
    let reward = [0.4, 0.6, 0.5];
    let sd = [0.001, 0.001, 0.25];
    let cost = [0.5, 0.5 + alpha, 0.0];
    let arms = (0..3)
        .map(|a| {
            (
                Gaussian::new(reward[a], sd[a] * scale),
                Gaussian::point(cost[a]),
            )
        })
        .collect();
    let mdp = LayeredMdp::bandit(arms, 1.0)?;
    let policy = TargetPolicy::uniform(&mdp);
    Ok(Scenario {
        id: "intractable_bandit".into(),
        mdp,
        policy,
        topology: Topology::Bandit,
        alpha,
        defaults: defaults(Topology::Bandit, BANDIT_WIDTH_SCALE),
    })
}

fn bandit11() -> Result<Scenario, HarnessError> {
    let mut arms = vec![
        (Gaussian::new(0.5, 0.01), Gaussian::point(0.5)),
        (Gaussian::new(0.9, 0.01), Gaussian::point(0.9)),
    ];
    let noisy = 10;
    for i in 0..noisy {
        let mu = 0.02 + 0.01 * i as f64 / (noisy - 1) as f64;
        arms.push((Gaussian::new(mu, 40f64.sqrt()), Gaussian::point(mu)));
    }
    let mdp = LayeredMdp::bandit(arms, 1.0)?;
    let mut row = vec![0.4, 0.4];
    row.extend(std::iter::repeat_n(0.2 / noisy as f64, noisy));
    let policy = TargetPolicy::new(&mdp, vec![row])?;
    Ok(Scenario {
        id: "bandit11".into(),
        mdp,
        policy,
        topology: Topology::Bandit,
        alpha: 0.5,
        defaults: defaults(Topology::Bandit, BANDIT_WIDTH_SCALE),
    })
}

fn tree4x2() -> Result<Scenario, HarnessError> {
    let depth = 4;
    let num_states = (1 << depth) - 1;
    let sd = [0.1, 20f64.sqrt()];
    let cost = [0.5, 0.8];
    let states = (0..num_states)
        .map(|s: usize| {
            let level = (s + 1).ilog2() as usize + 1;
            let actions = (0..2)
                .map(|a| ActionSpec {
                    reward: Gaussian::new(0.2 + 0.04 * s as f64 + 0.1 * a as f64, sd[a]),
                    cost: Gaussian::point(cost[a]),
                    next: if level < depth {
                        vec![(2 * s + 1 + a, 1.0)]
                    } else {
                        Vec::new()
                    },
                })
                .collect();
            StateSpec { level, actions }
        })
        .collect();
    let mdp = LayeredMdp::new(states, 1.0, 1.0)?;
    let rows = vec![vec![0.95, 0.05]; num_states];
    let policy = TargetPolicy::new(&mdp, rows)?;
    Ok(Scenario {
        id: "tree4x2".into(),
        mdp,
        policy,
        topology: Topology::Tree,
        alpha: 0.25,
        defaults: defaults(Topology::Tree, MDP_WIDTH_SCALE),
    })
}

fn grid4x4(low_variance: bool) -> Result<Scenario, HarnessError> {
    const SIDE: i64 = 4;
    const STEPS: usize = 4;
    const SLIP: f64 = 0.2;
    // R, D, L, U as (row, col) offsets
    let moves: [(i64, i64); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];
    let high_sd = if low_variance { 0.1 } else { 20f64.sqrt() };
    let sd = [0.1, 0.1, high_sd, high_sd];
    let cost = [0.4, 0.4, 0.8, 0.8];
    let pi = [0.45, 0.45, 0.05, 0.05];

    let mut cells = Vec::new();
    for t in 0..STEPS as i64 {
        for r in 0..SIDE {
            for c in 0..SIDE {
                if r + c <= t {
                    cells.push((t as usize + 1, r, c));
                }
            }
        }
    }
    let index_of = |level: usize, r: i64, c: i64| {
        cells
            .iter()
            .position(|&(l, rr, cc)| l == level && rr == r && cc == c)
            .expect("reachable cell")
    };
    let states = cells
        .iter()
        .map(|&(level, r, c)| {
            let actions = moves
                .iter()
                .enumerate()
                .map(|(a, &(dr, dc))| {
                    let next = if level == STEPS {
                        Vec::new()
                    } else {
                        let (nr, nc) = (r + dr, c + dc);
                        let stay = index_of(level + 1, r, c);
                        if (0..SIDE).contains(&nr) && (0..SIDE).contains(&nc) {
                            vec![(index_of(level + 1, nr, nc), 1.0 - SLIP), (stay, SLIP)]
                        } else {
                            vec![(stay, 1.0)]
                        }
                    };
                    ActionSpec {
                        reward: Gaussian::new(0.1 + 0.1 * (r + c) as f64 + 0.05 * a as f64, sd[a]),
                        cost: Gaussian::point(cost[a]),
                        next,
                    }
                })
                .collect();
            StateSpec { level, actions }
        })
        .collect();
    let mdp = LayeredMdp::new(states, 1.0, 1.0)?;
    let policy = TargetPolicy::new(&mdp, vec![pi.to_vec(); mdp.num_states()])?;
    Ok(Scenario {
        id: "grid4x4".into(),
        mdp,
        policy,
        topology: Topology::Dag,
        alpha: 0.25,
        defaults: defaults(Topology::Dag, MDP_WIDTH_SCALE),
    })
}
