//! `curves.csv` and `summary.json`.
//!
//! Floats in the CSV use fixed `{:.9e}` formatting and JSON uses the
//! shortest round-trip representation, so identical metrics give identical
//! bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{aggregate, Cell, RunInfo, RunMetrics, StrategyCurve};
use super::HarnessError;
use crate::allocation::ComplexityReport;
use crate::strategies::StrategyKind;

pub const CURVES_HEADER: &str = "strategy,n,rep,mse,violations,final_budget";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
    pub reference: StrategyKind,
    pub strategies: Vec<StrategyCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complexity: Option<ComplexityReport>,
}

impl From<&RunMetrics> for Summary {
    fn from(m: &RunMetrics) -> Self {
        Summary {
            run: Some(m.info.clone()),
            reference: m.reference,
            strategies: m.curves.clone(),
            complexity: m.complexity.clone(),
        }
    }
}

/// One row per cell; `mse` holds that run's squared error.
pub fn curves_csv(cells: &[Cell]) -> String {
    let mut out = String::with_capacity(64 * (cells.len() + 1));
    out.push_str(CURVES_HEADER);
    out.push('\n');
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{:.9e},{},{:.9e}",
            c.strategy, c.n, c.rep, c.sq_error, c.violations, c.final_budget
        );
    }
    out
}

pub fn summary_json(summary: &Summary) -> Result<String, HarnessError> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    Ok(text)
}

/// Writes both files into `dir`, creating it if needed.
pub fn write_outputs(
    metrics: &RunMetrics,
    dir: impl AsRef<Path>,
) -> Result<(PathBuf, PathBuf), HarnessError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let curves = dir.join("curves.csv");
    std::fs::write(&curves, curves_csv(&metrics.cells))
        .map_err(|e| HarnessError::io(&curves, e))?;
    let summary = dir.join("summary.json");
    std::fs::write(&summary, summary_json(&Summary::from(metrics))?)
        .map_err(|e| HarnessError::io(&summary, e))?;
    Ok((curves, summary))
}

#[derive(Debug, Deserialize)]
struct CurveRow {
    strategy: StrategyKind,
    n: u64,
    rep: usize,
    mse: f64,
    violations: u64,
    final_budget: f64,
}

/// Reads cells back from a `curves.csv` file.
pub fn read_curves_csv(path: impl AsRef<Path>) -> Result<Vec<Cell>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut cells = Vec::new();
    for row in reader.deserialize() {
        let row: CurveRow = row?;
        cells.push(Cell {
            strategy: row.strategy,
            n: row.n,
            rep: row.rep,
            sq_error: row.mse,
            violations: row.violations,
            final_budget: row.final_budget,
            constraint_ok: None,
            decisions: None,
            baseline_decisions: None,
            min_budget: None,
            actions: Vec::new(),
        });
    }
    Ok(cells)
}

/// Recomputes curves and slopes from previously written cells.
pub fn report_from_cells(cells: &[Cell], reference: StrategyKind) -> Summary {
    Summary {
        run: None,
        reference,
        strategies: aggregate(cells, reference),
        complexity: None,
    }
}
