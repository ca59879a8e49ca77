//! TOML experiment configuration.
//!
//! Every field except `[environment]` is optional; gaps are filled from the
//! scenario defaults (or generic defaults for inline environments) when the
//! config is resolved into a plan.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::env::{MdpDocument, Topology};
use crate::estimator::WidthMode;
use crate::strategies::StrategyKind;

/// Environment variable overriding the base seed.
pub const SEED_ENV_VAR: &str = "SAVER_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budgets: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<StrategyKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Strategy whose curve regret is measured against.
    #[serde(default = "default_reference")]
    pub reference: StrategyKind,
    /// Keep per-run action traces in memory (not written to disk).
    #[serde(default)]
    pub record_actions: bool,
    #[serde(default)]
    pub width: WidthSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub target: TargetSection,
    pub environment: EnvironmentSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_reference() -> StrategyKind {
    StrategyKind::SafeOracle
}

/// Exactly one of `scenario`, `arm_table` or `mdp` must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm_table: Option<PathBuf>,
    /// Validation mode for an inline environment (default `tree`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Topology>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_low_variance: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdp: Option<MdpDocument>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    /// Uniform over actions in every state; overrides the scenario's policy.
    #[serde(default)]
    pub uniform: bool,
    /// Explicit rows, one per state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidthSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<WidthMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Multiplier on the radius subtracted from cost means.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_scale: Option<f64>,
    /// Multiplier on the radius added to reward deviations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_scale: Option<f64>,
    /// Give plug-in strategies the true reward deviations.
    #[serde(default)]
    pub inject_sigma: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Minimal config running a built-in scenario with its defaults.
    pub fn for_scenario(id: &str) -> Self {
        Self {
            seed: 0,
            repetitions: None,
            budgets: None,
            strategies: None,
            alpha: None,
            reference: default_reference(),
            record_actions: false,
            width: WidthSection::default(),
            output: OutputSection::default(),
            target: TargetSection::default(),
            environment: EnvironmentSection {
                scenario: Some(id.to_string()),
                ..EnvironmentSection::default()
            },
            base_dir: None,
        }
    }

    /// Replaces the seed when `value` is set.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<(), HarnessError> {
        if let Some(raw) = value {
            self.seed = raw.trim().parse().map_err(|_| {
                HarnessError::Config(format!("{SEED_ENV_VAR}=`{raw}` is not an unsigned integer"))
            })?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub(crate) fn resolve_path(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    Ok(toml::from_str(text)?)
}

/// Reads a config file and applies the seed override from the environment.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut config = parse_config(&text)?;
    config.base_dir = path.parent().map(Path::to_path_buf);
    config.apply_seed_override(std::env::var(SEED_ENV_VAR).ok().as_deref())?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_config() {
        let cfg = parse_config("[environment]\nscenario = \"tree4x2\"\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::for_scenario("tree4x2"));
        assert_eq!(cfg.reference, StrategyKind::SafeOracle);
    }

    #[test]
    fn full_config() {
        let text = r#"
seed = 9
repetitions = 3
budgets = [8, 16]
strategies = ["on_policy", "saver"]
alpha = 0.5

[width]
mode = "main"
delta = 0.1
cost_scale = 0.5

[environment]
arm_table = "arms.csv"
"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(
            cfg.strategies,
            Some(vec![StrategyKind::OnPolicy, StrategyKind::Saver])
        );
        assert_eq!(cfg.width.mode, Some(WidthMode::Main));
        assert_eq!(cfg.environment.arm_table, Some(PathBuf::from("arms.csv")));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(parse_config("sed = 1\n[environment]\nscenario = \"x\"\n").is_err());
        assert!(parse_config("[environment]\nscenario = \"x\"\ncolour = 1\n").is_err());
        assert!(
            parse_config("strategies = [\"greedy\"]\n[environment]\nscenario = \"x\"\n").is_err()
        );
    }

    #[test]
    fn seed_override() {
        let mut cfg = ExperimentConfig::for_scenario("tree4x2");
        cfg.apply_seed_override(Some("42")).unwrap();
        assert_eq!(cfg.seed, 42);
        cfg.apply_seed_override(None).unwrap();
        assert_eq!(cfg.seed, 42);
        assert!(cfg.apply_seed_override(Some("-1")).is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let mut cfg = ExperimentConfig::for_scenario("bandit11");
        cfg.budgets = Some(vec![100, 200]);
        cfg.width.cost_scale = Some(0.1);
        let back = parse_config(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
