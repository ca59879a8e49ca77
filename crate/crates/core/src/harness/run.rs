//! Plan resolution, random streams and the Monte Carlo loop.
//!
//! Every run draws from keyed ChaCha streams: one per `(state, action)` pair
//! for environment noise and one for the behavior policy, all keyed by
//! `(seed, budget index, repetition)`. Strategies are deliberately left out
//! of the key so that competing strategies face the same noise sequence at
//! each pair (common random numbers).

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::metrics::{aggregate, Cell, RunInfo, RunMetrics};
use super::scenario::{scenario, ScenarioOptions};
use super::{load_arm_table_csv, HarnessError};
use crate::allocation::complexity_report;
use crate::env::{ActionId, LayeredMdp, NoiseSource, StateId, TargetPolicy, Topology};
use crate::estimator::{WidthMode, WidthParams};
use crate::strategies::{simulate, Problem, RunOutcome, StrategyKind, StrategySettings};

const DEFAULT_BUDGETS: [u64; 5] = [500, 1000, 2000, 4000, 8000];
const DEFAULT_REPETITIONS: usize = 200;
const DEFAULT_DELTA: f64 = 0.05;
const DEFAULT_ALPHA: f64 = 0.25;

/// Purpose of a random stream within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Behavior,
    /// Environment noise of the pair with this flat index.
    Pair(usize),
}

impl Role {
    fn key(self) -> u64 {
        match self {
            Role::Behavior => 0,
            Role::Pair(i) => 1 + i as u64,
        }
    }
}

/// Generator keyed by `(seed, budget index, repetition, role)`.
pub fn stream_rng(seed: u64, budget_index: usize, rep: usize, role: Role) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(budget_index as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(rep as u64).to_le_bytes());
    key[24..].copy_from_slice(&role.key().to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// One independent generator per `(state, action)` pair.
pub struct PairStreams {
    offsets: Vec<usize>,
    streams: Vec<ChaCha8Rng>,
}

impl NoiseSource for PairStreams {
    type Stream = ChaCha8Rng;

    fn stream(&mut self, state: StateId, action: ActionId) -> &mut ChaCha8Rng {
        &mut self.streams[self.offsets[state] + action]
    }
}

pub fn pair_streams(mdp: &LayeredMdp, seed: u64, budget_index: usize, rep: usize) -> PairStreams {
    let mut offsets = Vec::with_capacity(mdp.num_states());
    let mut acc = 0;
    for s in 0..mdp.num_states() {
        offsets.push(acc);
        acc += mdp.num_actions(s);
    }
    let streams = (0..acc)
        .map(|i| stream_rng(seed, budget_index, rep, Role::Pair(i)))
        .collect();
    PairStreams { offsets, streams }
}

/// How repetitions are scheduled. Results do not depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Serial,
    /// Thread pool of the given size (`None`: one per core). Runs serially
    /// when the crate is built without the `parallel` feature.
    Parallel {
        threads: Option<usize>,
    },
}

/// Fully resolved experiment.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub label: String,
    pub problem: Problem,
    pub alpha: f64,
    pub strategies: Vec<StrategyKind>,
    pub budgets: Vec<u64>,
    pub repetitions: usize,
    pub seed: u64,
    pub reference: StrategyKind,
    pub settings: StrategySettings,
    pub output_dir: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Validates a config and fills every gap from scenario or generic defaults.
pub fn resolve(config: &ExperimentConfig) -> Result<ExperimentPlan, HarnessError> {
    let env = &config.environment;
    let sources = [
        env.scenario.is_some(),
        env.arm_table.is_some(),
        env.mdp.is_some(),
    ];
    if sources.iter().filter(|&&s| s).count() != 1 {
        return Err(config_err(
            "[environment] needs exactly one of `scenario`, `arm_table`, `mdp`",
        ));
    }
    if env.scenario.is_none() && (env.grid_low_variance.is_some() || env.noise_scale.is_some()) {
        return Err(config_err(
            "`grid_low_variance` and `noise_scale` only apply to scenarios",
        ));
    }

    let (label, mdp, policy, topology, alpha, defaults) = if let Some(id) = &env.scenario {
        let options = ScenarioOptions {
            grid_low_variance: env.grid_low_variance.unwrap_or(false),
            noise_scale: env.noise_scale.unwrap_or(1.0),
        };
        let sc = scenario(id, &options)?;
        if env.topology.is_some_and(|t| t != sc.topology) {
            return Err(config_err(format!(
                "scenario {id} is a {} environment",
                sc.topology.as_str()
            )));
        }
        (
            sc.id,
            sc.mdp,
            Some(sc.policy),
            sc.topology,
            Some(sc.alpha),
            Some(sc.defaults),
        )
    } else if let Some(path) = &env.arm_table {
        let mdp = load_arm_table_csv(config.resolve_path(path))?;
        (
            path.display().to_string(),
            mdp,
            None,
            Topology::Bandit,
            None,
            None,
        )
    } else {
        let doc = env.mdp.clone().expect("checked above");
        let mdp = LayeredMdp::try_from(doc)?;
        let topology = env.topology.unwrap_or(Topology::Tree);
        ("inline".to_string(), mdp, None, topology, None, None)
    };
    mdp.validate(topology)?;

    let policy = match (&config.target.probs, config.target.uniform) {
        (Some(_), true) => return Err(config_err("[target] sets both `uniform` and `probs`")),
        (Some(rows), false) => TargetPolicy::new(&mdp, rows.clone())?,
        (None, true) => TargetPolicy::uniform(&mdp),
        (None, false) => policy.unwrap_or_else(|| TargetPolicy::uniform(&mdp)),
    };

    let alpha = config.alpha.or(alpha).unwrap_or(DEFAULT_ALPHA);
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(config_err(format!("alpha = {alpha} must lie in (0, 1]")));
    }
    let budgets = config
        .budgets
        .clone()
        .or_else(|| defaults.as_ref().map(|d| d.budgets.clone()))
        .unwrap_or_else(|| DEFAULT_BUDGETS.to_vec());
    if budgets.is_empty() {
        return Err(config_err("`budgets` is empty"));
    }
    let horizon = mdp.num_levels();
    if let Some(&bad) = budgets.iter().find(|&&n| n == 0 || n % horizon as u64 != 0) {
        return Err(HarnessError::BudgetNotDivisible {
            budget: bad,
            horizon,
        });
    }
    let repetitions = config
        .repetitions
        .or(defaults.as_ref().map(|d| d.repetitions))
        .unwrap_or(DEFAULT_REPETITIONS);
    if repetitions == 0 {
        return Err(config_err("`repetitions` must be at least 1"));
    }
    let strategies = config
        .strategies
        .clone()
        .or_else(|| defaults.as_ref().map(|d| d.strategies.clone()))
        .unwrap_or_else(|| default_strategies(topology));
    if strategies.is_empty() {
        return Err(config_err("`strategies` is empty"));
    }
    let single_state = mdp.num_states() == 1;
    if !single_state && strategies.contains(&StrategyKind::BanditSaver) {
        return Err(config_err("bandit_saver needs a single-state environment"));
    }

    let delta = config
        .width
        .delta
        .or(defaults.as_ref().map(|d| d.delta))
        .unwrap_or(DEFAULT_DELTA);
    if !(delta > 0.0 && delta < 1.0) {
        return Err(config_err(format!(
            "width.delta = {delta} must lie in (0, 1)"
        )));
    }
    let cost_scale = config
        .width
        .cost_scale
        .or(defaults.as_ref().map(|d| d.cost_width_scale))
        .unwrap_or(1.0);
    let sigma_scale = config.width.sigma_scale.unwrap_or(1.0);
    for (name, v) in [("cost_scale", cost_scale), ("sigma_scale", sigma_scale)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(config_err(format!(
                "width.{name} = {v} must be finite and nonnegative"
            )));
        }
    }
    let mut width = WidthParams::for_mdp(
        &mdp,
        config.width.mode.unwrap_or(WidthMode::Appendix),
        delta,
        0,
    );
    width.cost_scale = cost_scale;
    width.sigma_scale = sigma_scale;

    let problem = Problem::new(mdp, policy, topology)?;
    Ok(ExperimentPlan {
        label,
        problem,
        alpha,
        strategies,
        budgets,
        repetitions,
        seed: config.seed,
        reference: config.reference,
        settings: StrategySettings {
            alpha,
            width,
            inject_sigma: config.width.inject_sigma,
            record_actions: config.record_actions,
        },
        output_dir: config.output.dir.as_ref().map(|d| config.resolve_path(d)),
    })
}

fn default_strategies(topology: Topology) -> Vec<StrategyKind> {
    let tracker = match topology {
        Topology::Bandit => StrategyKind::BanditSaver,
        Topology::Tree | Topology::Dag => StrategyKind::Saver,
    };
    vec![
        StrategyKind::OnPolicy,
        StrategyKind::OracleUnconstrained,
        StrategyKind::SafeOracle,
        tracker,
    ]
}

/// One repetition of one strategy at one budget.
fn run_cell(
    plan: &ExperimentPlan,
    strategy: usize,
    budget_index: usize,
    rep: usize,
) -> Result<Cell, HarnessError> {
    let kind = plan.strategies[strategy];
    let n = plan.budgets[budget_index];
    let mut noise = pair_streams(&plan.problem.mdp, plan.seed, budget_index, rep);
    let mut rng = stream_rng(plan.seed, budget_index, rep, Role::Behavior);
    let out: RunOutcome = simulate(&plan.problem, kind, &plan.settings, n, &mut noise, &mut rng)?;
    let min_budget = out
        .budget_trace
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let decisions = out.budget_trace.len() as u64;
    Ok(Cell {
        strategy: kind,
        n,
        rep,
        sq_error: out.sq_error,
        violations: out.violations,
        final_budget: out.final_budget,
        constraint_ok: Some(out.constraint_ok),
        decisions: Some(decisions),
        baseline_decisions: Some(out.baseline_decisions),
        min_budget: Some(min_budget),
        actions: out.actions,
    })
}

fn run_cells(plan: &ExperimentPlan, mode: ExecMode) -> Result<Vec<Cell>, HarnessError> {
    let per_strategy = plan.budgets.len() * plan.repetitions;
    let total = plan.strategies.len() * per_strategy;
    let job = |i: usize| {
        let strategy = i / per_strategy;
        let budget_index = (i % per_strategy) / plan.repetitions;
        let rep = i % plan.repetitions;
        run_cell(plan, strategy, budget_index, rep)
    };
    match mode {
        ExecMode::Serial => (0..total).map(job).collect(),
        ExecMode::Parallel { threads } => parallel_cells(total, threads, job),
    }
}

#[cfg(feature = "parallel")]
fn parallel_cells<F>(
    total: usize,
    threads: Option<usize>,
    job: F,
) -> Result<Vec<Cell>, HarnessError>
where
    F: Fn(usize) -> Result<Cell, HarnessError> + Sync + Send,
{
    use rayon::prelude::*;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..total).into_par_iter().map(job).collect())
}

#[cfg(not(feature = "parallel"))]
fn parallel_cells<F>(
    total: usize,
    _threads: Option<usize>,
    job: F,
) -> Result<Vec<Cell>, HarnessError>
where
    F: Fn(usize) -> Result<Cell, HarnessError>,
{
    (0..total).map(job).collect()
}

/// Runs every `(strategy, budget, repetition)` cell of a resolved plan.
pub fn run_plan(plan: &ExperimentPlan, mode: ExecMode) -> Result<RunMetrics, HarnessError> {
    let started = Instant::now();
    let cells = run_cells(plan, mode)?;
    let expected = plan.strategies.len() * plan.budgets.len() * plan.repetitions;
    assert_eq!(cells.len(), expected, "every run must produce a cell");
    let curves = aggregate(&cells, plan.reference);
    let complexity = complexity_report(&plan.problem.mdp, &plan.problem.policy, plan.alpha).ok();
    Ok(RunMetrics {
        info: RunInfo {
            label: plan.label.clone(),
            seed: plan.seed,
            repetitions: plan.repetitions,
            alpha: plan.alpha,
            budgets: plan.budgets.clone(),
            width_mode: plan.settings.width.mode,
            delta: plan.settings.width.delta,
            cost_scale: plan.settings.width.cost_scale,
            sigma_scale: plan.settings.width.sigma_scale,
            inject_sigma: plan.settings.inject_sigma,
        },
        reference: plan.reference,
        cells,
        curves,
        complexity,
        wall_clock: started.elapsed(),
    })
}

pub fn run_experiment(
    config: &ExperimentConfig,
    mode: ExecMode,
) -> Result<RunMetrics, HarnessError> {
    run_plan(&resolve(config)?, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_keyed() {
        let a = stream_rng(1, 0, 0, Role::Behavior).next_u64();
        assert_eq!(a, stream_rng(1, 0, 0, Role::Behavior).next_u64());
        assert_ne!(a, stream_rng(1, 0, 1, Role::Behavior).next_u64());
        assert_ne!(a, stream_rng(1, 1, 0, Role::Behavior).next_u64());
        assert_ne!(a, stream_rng(1, 0, 0, Role::Pair(0)).next_u64());
        assert_ne!(a, stream_rng(2, 0, 0, Role::Behavior).next_u64());
    }

    #[test]
    fn resolve_rejects_bad_configs() {
        let mut cfg = ExperimentConfig::for_scenario("tree4x2");
        cfg.budgets = Some(vec![10]);
        assert!(matches!(
            resolve(&cfg),
            Err(HarnessError::BudgetNotDivisible {
                budget: 10,
                horizon: 4
            })
        ));

        let mut cfg = ExperimentConfig::for_scenario("tree4x2");
        cfg.repetitions = Some(0);
        assert!(matches!(resolve(&cfg), Err(HarnessError::Config(_))));

        let mut cfg = ExperimentConfig::for_scenario("tree4x2");
        cfg.strategies = Some(vec![]);
        assert!(matches!(resolve(&cfg), Err(HarnessError::Config(_))));

        let mut cfg = ExperimentConfig::for_scenario("tree4x2");
        cfg.strategies = Some(vec![StrategyKind::BanditSaver]);
        assert!(matches!(resolve(&cfg), Err(HarnessError::Config(_))));

        let mut cfg = ExperimentConfig::for_scenario("tree4x2");
        cfg.environment.arm_table = Some("x.csv".into());
        assert!(matches!(resolve(&cfg), Err(HarnessError::Config(_))));

        let cfg = ExperimentConfig::for_scenario("castle");
        assert!(matches!(
            resolve(&cfg),
            Err(HarnessError::UnknownScenario(_))
        ));
    }

    #[test]
    fn resolve_uses_scenario_defaults() {
        let plan = resolve(&ExperimentConfig::for_scenario("grid4x4")).unwrap();
        assert_eq!(plan.budgets, DEFAULT_BUDGETS.to_vec());
        assert_eq!(plan.repetitions, 200);
        assert_eq!(plan.alpha, 0.25);
        assert_eq!(plan.problem.topology, Topology::Dag);
        assert!(plan.strategies.contains(&StrategyKind::Saver));
    }
}
