//! Monte Carlo experiment driver: scenarios, config ingestion, parallel runs,
//! metrics and output files.

mod arm_table;
mod config;
mod metrics;
mod output;
mod run;
mod scenario;

use std::path::PathBuf;

use thiserror::Error;

use crate::allocation::AllocationError;
use crate::env::EnvError;
use crate::strategies::StrategyError;

pub use arm_table::{load_arm_table_csv, parse_arm_table, ArmTableError};
pub use config::{
    load_config, parse_config, EnvironmentSection, ExperimentConfig, OutputSection, TargetSection,
    WidthSection, SEED_ENV_VAR,
};
pub use metrics::{aggregate, fit_slope, Cell, CurvePoint, RunInfo, RunMetrics, StrategyCurve};
pub use output::{
    curves_csv, read_curves_csv, report_from_cells, summary_json, write_outputs, Summary,
    CURVES_HEADER,
};
pub use run::{
    pair_streams, resolve, run_experiment, run_plan, stream_rng, ExecMode, ExperimentPlan,
    PairStreams, Role,
};
pub use scenario::{
    scenario, scenario_ids, Scenario, ScenarioDefaults, ScenarioOptions, SCENARIO_IDS,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("budget {budget} is not divisible by the horizon {horizon}")]
    BudgetNotDivisible { budget: u64, horizon: usize },
    #[error("slope fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("slope fit needs positive coordinates, got ({n}, {y})")]
    NonPositiveValue { n: f64, y: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    ArmTable(#[from] ArmTableError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
