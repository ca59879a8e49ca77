//! `saver` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use saver_core::env::MdpDocument;
use saver_core::harness::{
    load_config, read_curves_csv, report_from_cells, resolve, run_plan, scenario, scenario_ids,
    summary_json, write_outputs, EnvironmentSection, ExecMode, ExperimentConfig, HarnessError,
    ScenarioOptions, StrategyCurve, TargetSection,
};
use saver_core::strategies::StrategyKind;

const DEFAULT_OUT: &str = "saver-out";

#[derive(Debug, Parser)]
#[command(
    name = "saver",
    version,
    about = "Safe data collection for policy evaluation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write curves.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `[output] dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 1 runs serially.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Inspect built-in scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
    /// Recompute curves and slopes from a curves.csv file.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Strategy regret is measured against.
        #[arg(long, default_value = "safe_oracle", value_parser = parse_strategy)]
        reference: StrategyKind,
        /// Print the summary as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
enum ScenarioAction {
    /// List scenario ids.
    List,
    /// Print a self-contained config for a scenario.
    Dump { id: String },
}

fn parse_strategy(name: &str) -> Result<StrategyKind, String> {
    StrategyKind::parse(name).ok_or_else(|| {
        let known: Vec<&str> = StrategyKind::ALL.iter().map(|k| k.as_str()).collect();
        format!(
            "unknown strategy `{name}` (expected one of {})",
            known.join(", ")
        )
    })
}

fn print_curves(curves: &[StrategyCurve]) {
    println!(
        "{:<22} {:>7} {:>12} {:>12} {:>10} {:>8}",
        "strategy", "n", "mse", "regret", "viol_mean", "cons"
    );
    for curve in curves {
        for p in &curve.points {
            let regret = p.regret.map_or("-".to_string(), |r| format!("{r:.4e}"));
            let cons = p
                .constraint_rate
                .map_or("-".to_string(), |r| format!("{r:.3}"));
            println!(
                "{:<22} {:>7} {:>12.4e} {:>12} {:>10.2} {:>8}",
                curve.strategy.as_str(),
                p.n,
                p.mse,
                regret,
                p.violations_mean,
                cons
            );
        }
    }
    println!();
    for curve in curves {
        let fmt = |s: Option<f64>| s.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<22} mse slope {:>7}  regret slope {:>7}",
            curve.strategy.as_str(),
            fmt(curve.mse_slope),
            fmt(curve.regret_slope)
        );
    }
}

fn run(config: PathBuf, out: Option<PathBuf>, threads: Option<usize>) -> Result<(), HarnessError> {
    let cfg = load_config(&config)?;
    let mode = match threads {
        Some(0) => return Err(HarnessError::Config("--threads must be at least 1".into())),
        Some(1) => ExecMode::Serial,
        t => ExecMode::Parallel { threads: t },
    };
    let plan = resolve(&cfg)?;
    let out_dir = out
        .or_else(|| plan.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let metrics = run_plan(&plan, mode)?;
    let (curves, summary) = write_outputs(&metrics, &out_dir)?;
    print_curves(&metrics.curves);
    eprintln!(
        "wrote {} and {} in {:.2?}",
        curves.display(),
        summary.display(),
        metrics.wall_clock
    );
    Ok(())
}

fn dump(id: &str) -> Result<String, HarnessError> {
    let sc = scenario(id, &ScenarioOptions::default())?;
    let mut cfg = ExperimentConfig::for_scenario(id);
    cfg.alpha = Some(sc.alpha);
    cfg.budgets = Some(sc.defaults.budgets.clone());
    cfg.repetitions = Some(sc.defaults.repetitions);
    cfg.strategies = Some(sc.defaults.strategies.clone());
    cfg.width.delta = Some(sc.defaults.delta);
    cfg.width.cost_scale = Some(sc.defaults.cost_width_scale);
    cfg.target = TargetSection {
        uniform: false,
        probs: Some(sc.policy.rows().to_vec()),
    };
    cfg.environment = EnvironmentSection {
        topology: Some(sc.topology),
        mdp: Some(MdpDocument::from(sc.mdp)),
        ..EnvironmentSection::default()
    };
    Ok(format!("# scenario {id}\n{}", cfg.to_toml()?))
}

fn report(input: PathBuf, reference: StrategyKind, json: bool) -> Result<(), HarnessError> {
    let cells = read_curves_csv(&input)?;
    let summary = report_from_cells(&cells, reference);
    if json {
        print!("{}", summary_json(&summary)?);
    } else {
        print_curves(&summary.strategies);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            threads,
        } => run(config, out, threads),
        Command::Scenario {
            action: ScenarioAction::List,
        } => {
            for id in scenario_ids() {
                match scenario(id, &ScenarioOptions::default()) {
                    Ok(sc) => println!(
                        "{id:<20} {:<7} states {:>3}  levels {}  alpha {}",
                        sc.topology.as_str(),
                        sc.mdp.num_states(),
                        sc.mdp.num_levels(),
                        sc.alpha
                    ),
                    Err(e) => println!("{id:<20} unavailable: {e}"),
                }
            }
            Ok(())
        }
        Command::Scenario {
            action: ScenarioAction::Dump { id },
        } => dump(&id).map(|text| print!("{text}")),
        Command::Report {
            input,
            reference,
            json,
        } => report(input, reference, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
