use std::fs;

use saver_core::harness::{
    load_config, parse_config, read_curves_csv, report_from_cells, resolve, run_experiment,
    write_outputs, ExecMode, ExperimentConfig, HarnessError, CURVES_HEADER,
};
use saver_core::strategies::StrategyKind;

fn small(id: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_scenario(id);
    cfg.budgets = Some(vec![100, 200, 400]);
    cfg.repetitions = Some(6);
    cfg.seed = 3;
    cfg
}

#[test]
fn outputs_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = run_experiment(&small("tree4x2"), ExecMode::Serial).unwrap();
    let (curves, summary) = write_outputs(&metrics, dir.path()).unwrap();
    let text = fs::read_to_string(&curves).unwrap();
    assert_eq!(text.lines().next(), Some(CURVES_HEADER));
    assert_eq!(text.lines().count(), 1 + 4 * 3 * 6);

    let cells = read_curves_csv(&curves).unwrap();
    assert_eq!(cells.len(), metrics.cells.len());
    for (a, b) in cells.iter().zip(&metrics.cells) {
        assert_eq!(
            (a.strategy, a.n, a.rep, a.violations),
            (b.strategy, b.n, b.rep, b.violations)
        );
        assert!((a.sq_error - b.sq_error).abs() <= 1e-9 * b.sq_error.abs().max(1e-300));
    }
    let report = report_from_cells(&cells, StrategyKind::SafeOracle);
    for (r, m) in report.strategies.iter().zip(&metrics.curves) {
        assert_eq!(r.strategy, m.strategy);
        for (p, q) in r.points.iter().zip(&m.points) {
            assert!((p.mse - q.mse).abs() <= 1e-8 * q.mse);
        }
    }

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(json["reference"], "safe_oracle");
    assert_eq!(json["run"]["seed"], 3);
    assert_eq!(json["strategies"].as_array().unwrap().len(), 4);
}

#[test]
fn execution_mode_does_not_change_results() {
    let cfg = small("grid4x4");
    let serial = run_experiment(&cfg, ExecMode::Serial).unwrap();
    let threaded = run_experiment(&cfg, ExecMode::Parallel { threads: Some(3) }).unwrap();
    assert_eq!(serial.cells, threaded.cells);
    assert_eq!(serial.curves, threaded.curves);
}

#[test]
fn seed_changes_results() {
    let mut cfg = small("bandit11");
    let a = run_experiment(&cfg, ExecMode::Serial).unwrap();
    cfg.seed = 4;
    let b = run_experiment(&cfg, ExecMode::Serial).unwrap();
    assert_ne!(a.cells, b.cells);
}

#[test]
fn arm_table_paths_resolve_against_the_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("arms.csv"),
        "arm,reward_mean,reward_std,cost_mean,cost_std\n0,0.5,0.1,0.5,0.0\n1,0.7,1.0,0.8,0.0\n2,0.1,2.0,0.1,0.0\n",
    )
    .unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        "seed = 1\nrepetitions = 3\nbudgets = [60, 120, 240]\nalpha = 0.5\n\n[environment]\narm_table = \"arms.csv\"\n",
    )
    .unwrap();
    let cfg = load_config(&path).unwrap();
    let metrics = run_experiment(&cfg, ExecMode::Serial).unwrap();
    let kinds: Vec<_> = metrics.curves.iter().map(|c| c.strategy).collect();
    assert_eq!(
        kinds,
        vec![
            StrategyKind::OnPolicy,
            StrategyKind::OracleUnconstrained,
            StrategyKind::SafeOracle,
            StrategyKind::BanditSaver
        ]
    );
    assert_eq!(metrics.info.alpha, 0.5);
}

#[test]
fn inline_environment() {
    let text = r#"
repetitions = 2
budgets = [20, 40, 80]
strategies = ["on_policy", "saver", "baseline_only"]
reference = "on_policy"

[target]
probs = [[0.5, 0.5], [1.0], [0.2, 0.8]]

[environment.mdp]
eta = 1.0

[[environment.mdp.states]]
level = 1
actions = [
    { reward = { mean = 0.5, std = 0.1 }, cost = { mean = 0.6, std = 0.0 }, next = [[1, 1.0]] },
    { reward = { mean = 0.4, std = 1.0 }, cost = { mean = 0.9, std = 0.0 }, next = [[2, 1.0]] },
]

[[environment.mdp.states]]
level = 2
actions = [{ reward = { mean = 0.2, std = 0.5 }, cost = { mean = 0.5, std = 0.0 } }]

[[environment.mdp.states]]
level = 2
actions = [
    { reward = { mean = 0.3, std = 0.0 }, cost = { mean = 0.5, std = 0.0 } },
    { reward = { mean = 0.6, std = 2.0 }, cost = { mean = 0.1, std = 0.0 } },
]
"#;
    let cfg = parse_config(text).unwrap();
    let plan = resolve(&cfg).unwrap();
    assert_eq!(plan.problem.mdp.num_states(), 3);
    assert_eq!(plan.problem.policy.row(2), &[0.2, 0.8]);
    let metrics = run_experiment(&cfg, ExecMode::Serial).unwrap();
    let baseline = metrics.curve(StrategyKind::BaselineOnly).unwrap();
    assert!(baseline
        .points
        .iter()
        .all(|p| p.constraint_rate == Some(1.0)));
}

#[test]
fn invalid_configs_are_rejected() {
    let err = |text: &str| resolve(&parse_config(text).unwrap()).unwrap_err();

    assert!(matches!(
        err("[environment]\nscenario = \"tree4x2\"\narm_table = \"a.csv\"\n"),
        HarnessError::Config(_)
    ));
    assert!(matches!(
        err("budgets = [101]\n[environment]\nscenario = \"tree4x2\"\n"),
        HarnessError::BudgetNotDivisible {
            budget: 101,
            horizon: 4
        }
    ));
    assert!(matches!(
        err("strategies = [\"bandit_saver\"]\n[environment]\nscenario = \"tree4x2\"\n"),
        HarnessError::Config(_)
    ));
    assert!(matches!(
        err("alpha = 0.0\n[environment]\nscenario = \"bandit11\"\n"),
        HarnessError::Config(_)
    ));
    assert!(matches!(
        err("[width]\ndelta = 1.5\n[environment]\nscenario = \"bandit11\"\n"),
        HarnessError::Config(_)
    ));
    assert!(matches!(
        err("[environment]\nscenario = \"maze\"\n"),
        HarnessError::UnknownScenario(_)
    ));
    assert!(matches!(
        err("[environment]\nscenario = \"bandit11\"\ntopology = \"tree\"\n"),
        HarnessError::Config(_)
    ));
    assert!(matches!(
        parse_config("[environment]\nscenario = 3\n"),
        Err(HarnessError::Toml(_))
    ));
}

#[test]
fn missing_files_report_their_path() {
    let e = load_config("/nonexistent/run.toml").unwrap_err();
    assert!(matches!(&e, HarnessError::Io { path, .. } if path.ends_with("run.toml")));
    assert!(e.to_string().contains("/nonexistent/run.toml"));
}
