//! Behavior policies and the safety budget that gates them.
//!
//! Episodic strategies commit to one phase per episode; the bandit form of
//! SaVeR (and the safe oracle on single-state environments) decides every
//! round with a one-step lookahead on the budget.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{compute_b_star, dag_allocation, AllocationTable};
use crate::env::{
    run_episode_with, true_value, ActionId, Channel, EnvError, EpisodeRecord, LayeredMdp,
    NoiseSource, StateId, TargetPolicy, Topology,
};
use crate::estimator::{
    certainty_value, estimates, estimates_with_sigma, plug_in_allocation, plug_in_dag_allocation,
    scaled, width, EstimateView, SufficientStats, WidthParams,
};

/// Slack allowed when comparing accumulated true costs with the constraint.
const CONSTRAINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrategyError {
    #[error("budget {budget} is not a positive multiple of the horizon {horizon}")]
    BudgetNotDivisible { budget: u64, horizon: usize },
    #[error("strategy {0} requires a single-state environment")]
    NotABandit(StrategyKind),
    #[error("baseline cost value must be positive, got {0}")]
    BaselineValue(f64),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    OnPolicy,
    BaselineOnly,
    OracleUnconstrained,
    SafeOracle,
    Saver,
    BanditSaver,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::OnPolicy,
        StrategyKind::BaselineOnly,
        StrategyKind::OracleUnconstrained,
        StrategyKind::SafeOracle,
        StrategyKind::Saver,
        StrategyKind::BanditSaver,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::OnPolicy => "on_policy",
            StrategyKind::BaselineOnly => "baseline_only",
            StrategyKind::OracleUnconstrained => "oracle_unconstrained",
            StrategyKind::SafeOracle => "safe_oracle",
            StrategyKind::Saver => "saver",
            StrategyKind::BanditSaver => "bandit_saver",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == name)
    }

    /// Whether the safety budget decides which phase runs.
    pub fn is_gated(self) -> bool {
        matches!(
            self,
            StrategyKind::SafeOracle | StrategyKind::Saver | StrategyKind::BanditSaver
        )
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Baseline,
    Explore,
    Track,
}

/// `ceil(sqrt(k))`.
pub fn exploration_horizon(k: u64) -> u64 {
    let r = k.isqrt();
    if r * r < k {
        r + 1
    } else {
        r
    }
}

/// Baseline iff `z < 0`; otherwise explore for the first `ceil(sqrt(K))` episodes.
pub fn phase_for_episode(k: u64, total: u64, z: f64) -> Phase {
    if z < 0.0 {
        Phase::Baseline
    } else if k <= exploration_horizon(total) {
        Phase::Explore
    } else {
        Phase::Track
    }
}

/// `argmax_a b(a) / T(a)` with `T = 0` mapping positive mass to `+inf`.
/// Ties go to the lowest index.
pub fn track_row(row: &[f64], counts: &[u64]) -> ActionId {
    let mut best = 0;
    let mut best_ratio = f64::NEG_INFINITY;
    for (a, (&b, &t)) in row.iter().zip(counts).enumerate() {
        let ratio = match t {
            0 if b > 0.0 => f64::INFINITY,
            0 => 0.0,
            _ => b / t as f64,
        };
        if ratio > best_ratio {
            best = a;
            best_ratio = ratio;
        }
    }
    best
}

pub fn track_action(state: StateId, stats: &SufficientStats, alloc: &AllocationTable) -> ActionId {
    track_row(alloc.row(state), stats.counts(state))
}

/// Uniform over the `num_actions` actions of a state.
pub fn explore_action<R: Rng + ?Sized>(num_actions: usize, rng: &mut R) -> ActionId {
    rng.random_range(0..num_actions)
}

/// Samples from a probability row.
pub fn on_policy_action<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> ActionId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (a, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = a;
        if u < acc {
            return a;
        }
    }
    last
}

/// Running lower-confidence surplus of collected cost over `(1 - alpha)` times the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyBudget {
    pub z: f64,
    pub alpha: f64,
    pub baseline_cost_value: f64,
    pub episodes_seen: u64,
    pub violation_count: u64,
    /// Sum of the per-episode (or per-round) cost lower bounds so far.
    pub running: f64,
    pub trace: Vec<f64>,
}

impl SafetyBudget {
    pub fn new(alpha: f64, baseline_cost_value: f64) -> Self {
        Self {
            z: 0.0,
            alpha,
            baseline_cost_value,
            episodes_seen: 0,
            violation_count: 0,
            running: 0.0,
            trace: Vec::new(),
        }
    }

    /// `(1 - alpha) k V_c^{pi_0}`.
    pub fn requirement(&self, k: u64) -> f64 {
        (1.0 - self.alpha) * k as f64 * self.baseline_cost_value
    }

    /// Stores a decision-point value.
    pub fn record(&mut self, z: f64) {
        self.z = z;
        self.trace.push(z);
        if z < 0.0 {
            self.violation_count += 1;
        }
    }
}

/// Discounted sum of cost lower bounds along the realized trajectory.
pub fn episode_cost_lcb(episode: &EpisodeRecord, view: &EstimateView, mdp: &LayeredMdp) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for st in &episode.steps {
        total += discount * view.lcb(st.state, st.action);
        discount *= mdp.gamma();
    }
    total
}

/// Closes episode `k` on the budget: adds its cost lower bound and records the new `z`.
pub fn update_budget_mdp(
    budget: &mut SafetyBudget,
    episode: &EpisodeRecord,
    view: &EstimateView,
    mdp: &LayeredMdp,
) {
    budget.running += episode_cost_lcb(episode, view, mdp);
    budget.episodes_seen += 1;
    let z = budget.running - budget.requirement(budget.episodes_seen);
    budget.record(z);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditDecision {
    pub phase: Phase,
    pub action: ActionId,
    pub candidate: ActionId,
    pub z: f64,
}

/// Round-`l` decision for a single-state environment.
///
/// The candidate `J` tracks `row` (proportions built from `pi sigma`); the
/// lookahead adds its cost lower bound when `J` has been pulled, otherwise
/// the budget is judged on the rounds already played.
pub fn bandit_step<R: Rng + ?Sized>(
    round: u64,
    budget_n: u64,
    row: &[f64],
    counts: &[u64],
    view: &EstimateView,
    budget: &SafetyBudget,
    rng: &mut R,
) -> BanditDecision {
    let candidate = track_row(row, counts);
    let z = if counts[candidate] > 0 {
        budget.running + view.lcb(0, candidate) - budget.requirement(round)
    } else {
        budget.running - budget.requirement(round - 1)
    };
    let (phase, action) = if z < 0.0 {
        (Phase::Baseline, 0)
    } else if round <= exploration_horizon(budget_n) {
        (Phase::Explore, explore_action(row.len(), rng))
    } else {
        (Phase::Track, candidate)
    };
    BanditDecision {
        phase,
        action,
        candidate,
        z,
    }
}

/// DAG tracking: proportions from `B_0` with plug-in deviations.
pub fn dag_strategy_action(
    state: StateId,
    stats: &SufficientStats,
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    view: &EstimateView,
) -> ActionId {
    let table = plug_in_dag_allocation(mdp, policy, view);
    track_action(state, stats, &table)
}

/// Environment, target policy and the exact quantities every run needs.
#[derive(Debug, Clone)]
pub struct Problem {
    pub mdp: LayeredMdp,
    pub policy: TargetPolicy,
    pub topology: Topology,
    pub sigma: Vec<Vec<f64>>,
    /// Oracle proportions (tree recursion, or the `B_0` sweep on DAGs).
    pub oracle: AllocationTable,
    pub target_value: f64,
    pub baseline_cost_value: f64,
    pub target_cost_value: f64,
    pub uniform_cost_value: f64,
}

impl Problem {
    pub fn new(
        mdp: LayeredMdp,
        policy: TargetPolicy,
        topology: Topology,
    ) -> Result<Self, StrategyError> {
        mdp.validate(topology)?;
        let sigma = mdp.reward_stds();
        let oracle = match topology {
            Topology::Dag => dag_allocation(&mdp, &policy, &sigma),
            Topology::Bandit | Topology::Tree => compute_b_star(&mdp, &policy),
        };
        let root = mdp.root();
        let target_value = true_value(&mdp, &policy, Channel::Reward)[root];
        let baseline_cost_value =
            true_value(&mdp, &TargetPolicy::baseline(&mdp), Channel::Cost)[root];
        if baseline_cost_value.is_nan() || baseline_cost_value <= 0.0 {
            return Err(StrategyError::BaselineValue(baseline_cost_value));
        }
        let target_cost_value = true_value(&mdp, &policy, Channel::Cost)[root];
        let uniform_cost_value =
            true_value(&mdp, &TargetPolicy::uniform(&mdp), Channel::Cost)[root];
        Ok(Self {
            mdp,
            policy,
            topology,
            sigma,
            oracle,
            target_value,
            baseline_cost_value,
            target_cost_value,
            uniform_cost_value,
        })
    }

    pub fn is_bandit(&self) -> bool {
        self.mdp.num_states() == 1
    }

    fn plug_in(&self, view: &EstimateView) -> AllocationTable {
        match self.topology {
            Topology::Dag => plug_in_dag_allocation(&self.mdp, &self.policy, view),
            Topology::Bandit | Topology::Tree => plug_in_allocation(&self.mdp, &self.policy, view),
        }
    }

    /// Exact cost value of the deterministic policy `s -> track(s)`.
    fn tracking_cost_value(&self, table: &AllocationTable, stats: &SufficientStats) -> f64 {
        let choice: Vec<ActionId> = (0..self.mdp.num_states())
            .map(|s| track_action(s, stats, table))
            .collect();
        let pol = TargetPolicy::deterministic(&self.mdp, &choice).expect("tracked actions exist");
        true_value(&self.mdp, &pol, Channel::Cost)[self.mdp.root()]
    }
}

/// Per-run knobs shared by all strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySettings {
    pub alpha: f64,
    /// Width parameters; `budget` is overwritten with the run's `n`.
    pub width: WidthParams,
    /// Replace estimated reward deviations with the true ones (plug-in strategies only).
    pub inject_sigma: bool,
    pub record_actions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub estimate: f64,
    pub sq_error: f64,
    /// Decision points with a negative budget.
    pub violations: u64,
    pub final_budget: f64,
    /// Whether accumulated true behavior cost met the constraint at every checkpoint.
    pub constraint_ok: bool,
    pub budget_trace: Vec<f64>,
    pub actions: Vec<ActionId>,
    pub baseline_decisions: u64,
}

/// Runs one strategy for a budget of `n` samples.
///
/// `noise` supplies the environment draws; `rng` drives the behavior policy
/// (exploration and on-policy sampling).
pub fn simulate<N: NoiseSource, R: Rng>(
    problem: &Problem,
    kind: StrategyKind,
    settings: &StrategySettings,
    n: u64,
    noise: &mut N,
    rng: &mut R,
) -> Result<RunOutcome, StrategyError> {
    let horizon = problem.mdp.num_levels();
    if n == 0 || !n.is_multiple_of(horizon as u64) {
        return Err(StrategyError::BudgetNotDivisible { budget: n, horizon });
    }
    let mut params = settings.width;
    params.budget = n;
    let round_level = kind == StrategyKind::BanditSaver
        || (kind == StrategyKind::SafeOracle && problem.is_bandit());
    if round_level {
        if !problem.is_bandit() {
            return Err(StrategyError::NotABandit(kind));
        }
        simulate_rounds(problem, kind, settings, &params, n, noise, rng)
    } else {
        simulate_episodes(
            problem,
            kind,
            settings,
            &params,
            n / horizon as u64,
            noise,
            rng,
        )
    }
}

fn view_for(
    problem: &Problem,
    kind: StrategyKind,
    settings: &StrategySettings,
    stats: &SufficientStats,
    params: &WidthParams,
) -> EstimateView {
    if settings.inject_sigma && matches!(kind, StrategyKind::Saver | StrategyKind::BanditSaver) {
        estimates_with_sigma(stats, params, &problem.sigma)
    } else {
        estimates(stats, params)
    }
}

fn finish(problem: &Problem, stats: &SufficientStats, params: &WidthParams) -> (f64, f64) {
    let view = estimates(stats, params);
    let est = certainty_value(&problem.mdp, &problem.policy, |s, a| view.mean_hat[s][a])
        [problem.mdp.root()];
    let err = est - problem.target_value;
    (est, err * err)
}

fn simulate_episodes<N: NoiseSource, R: Rng>(
    problem: &Problem,
    kind: StrategyKind,
    settings: &StrategySettings,
    params: &WidthParams,
    episodes: u64,
    noise: &mut N,
    rng: &mut R,
) -> Result<RunOutcome, StrategyError> {
    let mdp = &problem.mdp;
    let mut stats = SufficientStats::new(mdp);
    let mut budget = SafetyBudget::new(settings.alpha, problem.baseline_cost_value);
    let mut view = view_for(problem, kind, settings, &stats, params);
    let mut actions = Vec::new();
    let mut true_cost = 0.0;
    let mut constraint_ok = true;
    let mut baseline_decisions = 0;

    for k in 1..=episodes {
        let phase = if kind.is_gated() {
            phase_for_episode(k, episodes, budget.z)
        } else {
            Phase::Track
        };
        if phase == Phase::Baseline {
            baseline_decisions += 1;
        }
        let plug_in;
        let table = match (kind, phase) {
            (StrategyKind::Saver, Phase::Track) => {
                plug_in = problem.plug_in(&view);
                Some(&plug_in)
            }
            (StrategyKind::SafeOracle | StrategyKind::OracleUnconstrained, Phase::Track) => {
                Some(&problem.oracle)
            }
            _ => None,
        };
        true_cost += match (kind, phase) {
            (_, Phase::Baseline) | (StrategyKind::BaselineOnly, _) => problem.baseline_cost_value,
            (_, Phase::Explore) => problem.uniform_cost_value,
            (StrategyKind::OnPolicy, _) => problem.target_cost_value,
            _ => problem.tracking_cost_value(table.expect("tracking table"), &stats),
        };
        if true_cost < budget.requirement(k) - CONSTRAINT_TOL * k as f64 {
            constraint_ok = false;
        }

        let episode = {
            let stats = &stats;
            let selector = |s: StateId| -> ActionId {
                match (kind, phase) {
                    (_, Phase::Baseline) | (StrategyKind::BaselineOnly, _) => 0,
                    (_, Phase::Explore) => explore_action(mdp.num_actions(s), rng),
                    (StrategyKind::OnPolicy, _) => on_policy_action(problem.policy.row(s), rng),
                    _ => track_action(s, stats, table.expect("tracking table")),
                }
            };
            run_episode_with(mdp, selector, noise)?
        };
        stats.update(&episode);
        view = view_for(problem, kind, settings, &stats, params);
        update_budget_mdp(&mut budget, &episode, &view, mdp);
        if settings.record_actions {
            actions.extend(episode.steps.iter().map(|st| st.action));
        }
    }

    let (estimate, sq_error) = finish(problem, &stats, params);
    Ok(RunOutcome {
        estimate,
        sq_error,
        violations: budget.violation_count,
        final_budget: budget.z,
        constraint_ok,
        budget_trace: budget.trace,
        actions,
        baseline_decisions,
    })
}

/// Cost lower bound of one pair straight from the sums.
fn pair_lcb(
    stats: &SufficientStats,
    state: StateId,
    action: ActionId,
    params: &WidthParams,
) -> f64 {
    let t = stats.count(state, action);
    let mean = if t == 0 {
        0.0
    } else {
        stats.cost_sum(state, action) / t as f64
    };
    mean - scaled(params.cost_scale, width(t, params))
}

fn simulate_rounds<N: NoiseSource, R: Rng>(
    problem: &Problem,
    kind: StrategyKind,
    settings: &StrategySettings,
    params: &WidthParams,
    n: u64,
    noise: &mut N,
    rng: &mut R,
) -> Result<RunOutcome, StrategyError> {
    let mdp = &problem.mdp;
    let root = mdp.root();
    let mut stats = SufficientStats::new(mdp);
    let mut budget = SafetyBudget::new(settings.alpha, problem.baseline_cost_value);
    let mut actions = Vec::new();
    let mut true_cost = 0.0;
    let mut constraint_ok = true;
    let mut baseline_decisions = 0;

    for round in 1..=n {
        let view = view_for(problem, kind, settings, &stats, params);
        let plug_in;
        let row: &[f64] = if kind == StrategyKind::SafeOracle {
            problem.oracle.row(root)
        } else {
            plug_in = problem.plug_in(&view);
            plug_in.row(root)
        };
        let decision = bandit_step(round, n, row, stats.counts(root), &view, &budget, rng);
        budget.record(decision.z);
        true_cost += match decision.phase {
            Phase::Explore => problem.uniform_cost_value,
            _ => mdp.action(root, decision.action).cost.mean,
        };
        if decision.phase == Phase::Baseline {
            baseline_decisions += 1;
        }
        if true_cost < budget.requirement(round) - CONSTRAINT_TOL * round as f64 {
            constraint_ok = false;
        }
        let episode = run_episode_with(mdp, |_| decision.action, noise)?;
        stats.update(&episode);
        budget.running += pair_lcb(&stats, root, decision.action, params);
        budget.episodes_seen += 1;
        if settings.record_actions {
            actions.push(decision.action);
        }
    }

    let (estimate, sq_error) = finish(problem, &stats, params);
    Ok(RunOutcome {
        estimate,
        sq_error,
        violations: budget.violation_count,
        final_budget: budget.running - budget.requirement(n),
        constraint_ok,
        budget_trace: budget.trace,
        actions,
        baseline_decisions,
    })
}
