//! Aggregation of per-run results into curves and slopes.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::allocation::ComplexityReport;
use crate::env::ActionId;
use crate::estimator::WidthMode;
use crate::strategies::StrategyKind;

/// Result of one `(strategy, n, rep)` run.
///
/// Fields beyond the CSV columns are `None` when the cell was read back from
/// a `curves.csv` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub strategy: StrategyKind,
    pub n: u64,
    pub rep: usize,
    pub sq_error: f64,
    pub violations: u64,
    pub final_budget: f64,
    pub constraint_ok: Option<bool>,
    pub decisions: Option<u64>,
    pub baseline_decisions: Option<u64>,
    pub min_budget: Option<f64>,
    #[serde(skip)]
    pub actions: Vec<ActionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: u64,
    pub reps: usize,
    pub mse: f64,
    pub mse_stderr: f64,
    /// `mse - mse(reference)` at the same budget.
    pub regret: Option<f64>,
    pub violations_mean: f64,
    pub violations_max: u64,
    /// Quantiles 10%, 50%, 90% of the end-of-run budget across repetitions.
    pub final_budget_quantiles: [f64; 3],
    pub min_budget_mean: Option<f64>,
    /// Fraction of repetitions whose true cost met the constraint throughout.
    pub constraint_rate: Option<f64>,
    /// Fraction of decision points spent on the baseline.
    pub baseline_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyCurve {
    pub strategy: StrategyKind,
    pub points: Vec<CurvePoint>,
    /// Log-log slope of MSE against `n`.
    pub mse_slope: Option<f64>,
    /// Log-log slope of regret; absent when some regret is not positive.
    pub regret_slope: Option<f64>,
}

impl StrategyCurve {
    pub fn point(&self, n: u64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.n == n)
    }
}

/// Parameters echoed into the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub label: String,
    pub seed: u64,
    pub repetitions: usize,
    pub alpha: f64,
    pub budgets: Vec<u64>,
    pub width_mode: WidthMode,
    pub delta: f64,
    pub cost_scale: f64,
    pub sigma_scale: f64,
    pub inject_sigma: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub info: RunInfo,
    pub reference: StrategyKind,
    pub cells: Vec<Cell>,
    pub curves: Vec<StrategyCurve>,
    pub complexity: Option<ComplexityReport>,
    /// Not part of any serialized output.
    pub wall_clock: Duration,
}

impl RunMetrics {
    pub fn curve(&self, kind: StrategyKind) -> Option<&StrategyCurve> {
        self.curves.iter().find(|c| c.strategy == kind)
    }
}

/// Least-squares slope of `log y` on `log n`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64, HarnessError> {
    if points.len() < 3 {
        return Err(HarnessError::TooFewPoints(points.len()));
    }
    if let Some(&(n, y)) = points.iter().find(|(n, y)| !(*n > 0.0 && *y > 0.0)) {
        return Err(HarnessError::NonPositiveValue { n, y });
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(n, y)| (n.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::Config(
            "slope fit needs at least two distinct budgets".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    sum / count as f64
}

fn all_some<T: Copy>(cells: &[&Cell], f: impl Fn(&Cell) -> Option<T>) -> Option<Vec<T>> {
    cells.iter().map(|c| f(c)).collect()
}

fn point(n: u64, cells: &[&Cell]) -> CurvePoint {
    let reps = cells.len();
    let mse = mean(cells.iter().map(|c| c.sq_error));
    let var = if reps > 1 {
        cells
            .iter()
            .map(|c| (c.sq_error - mse).powi(2))
            .sum::<f64>()
            / (reps - 1) as f64
    } else {
        0.0
    };
    let mut finals: Vec<f64> = cells.iter().map(|c| c.final_budget).collect();
    finals.sort_by(f64::total_cmp);
    let constraint_rate = all_some(cells, |c| c.constraint_ok)
        .map(|v| v.iter().filter(|&&ok| ok).count() as f64 / reps as f64);
    let baseline_fraction = all_some(cells, |c| c.baseline_decisions.zip(c.decisions)).map(|v| {
        let (base, total) = v.iter().fold((0u64, 0u64), |(b, t), (x, y)| (b + x, t + y));
        base as f64 / total.max(1) as f64
    });
    CurvePoint {
        n,
        reps,
        mse,
        mse_stderr: (var / reps as f64).sqrt(),
        regret: None,
        violations_mean: mean(cells.iter().map(|c| c.violations as f64)),
        violations_max: cells.iter().map(|c| c.violations).max().unwrap_or(0),
        final_budget_quantiles: [
            quantile(&finals, 0.1),
            quantile(&finals, 0.5),
            quantile(&finals, 0.9),
        ],
        min_budget_mean: all_some(cells, |c| c.min_budget).map(|v| mean(v.into_iter())),
        constraint_rate,
        baseline_fraction,
    }
}

fn slope_of(points: &[CurvePoint], y: impl Fn(&CurvePoint) -> Option<f64>) -> Option<f64> {
    let pts: Option<Vec<(f64, f64)>> = points
        .iter()
        .map(|p| y(p).map(|v| (p.n as f64, v)))
        .collect();
    fit_slope(&pts?).ok()
}

/// Groups cells by strategy (first-appearance order) and budget (ascending).
pub fn aggregate(cells: &[Cell], reference: StrategyKind) -> Vec<StrategyCurve> {
    let mut order: Vec<StrategyKind> = Vec::new();
    for c in cells {
        if !order.contains(&c.strategy) {
            order.push(c.strategy);
        }
    }
    let mut curves: Vec<StrategyCurve> = order
        .iter()
        .map(|&kind| {
            let mine: Vec<&Cell> = cells.iter().filter(|c| c.strategy == kind).collect();
            let mut budgets: Vec<u64> = mine.iter().map(|c| c.n).collect();
            budgets.sort_unstable();
            budgets.dedup();
            let points = budgets
                .iter()
                .map(|&n| {
                    let at: Vec<&Cell> = mine.iter().copied().filter(|c| c.n == n).collect();
                    point(n, &at)
                })
                .collect();
            StrategyCurve {
                strategy: kind,
                points,
                mse_slope: None,
                regret_slope: None,
            }
        })
        .collect();

    let reference_points: Option<Vec<(u64, f64)>> = curves
        .iter()
        .find(|c| c.strategy == reference)
        .map(|c| c.points.iter().map(|p| (p.n, p.mse)).collect());
    for curve in &mut curves {
        if let Some(refs) = &reference_points {
            for p in &mut curve.points {
                p.regret = refs.iter().find(|(n, _)| *n == p.n).map(|(_, m)| p.mse - m);
            }
            if curve.strategy == reference {
                for p in &mut curve.points {
                    p.regret = Some(0.0);
                }
            }
        }
        curve.mse_slope = slope_of(&curve.points, |p| Some(p.mse));
        curve.regret_slope = slope_of(&curve.points, |p| p.regret);
    }
    curves
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slopes() {
        let pts: Vec<(f64, f64)> = [100.0, 200.0, 400.0, 800.0]
            .iter()
            .map(|&n: &f64| (n, 7.0 * n.powf(-1.5)))
            .collect();
        assert!((fit_slope(&pts).unwrap() + 1.5).abs() < 1e-12);
        let flat = [(1.0, 2.0), (2.0, 2.0), (3.0, 2.0)];
        assert!(fit_slope(&flat).unwrap().abs() < 1e-12);
        assert!(matches!(
            fit_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]),
            Err(HarnessError::NonPositiveValue { .. })
        ));
        assert!(matches!(
            fit_slope(&[(1.0, 1.0)]),
            Err(HarnessError::TooFewPoints(1))
        ));
    }

    #[test]
    fn noisy_inverse_rate() {
        let noise = [0.01, -0.01, 0.005, -0.008, 0.01];
        let pts: Vec<(f64, f64)> = [500.0, 1000.0, 2000.0, 4000.0, 8000.0]
            .iter()
            .zip(noise)
            .map(|(&n, e): (&f64, f64)| (n, (1.0 + e) / n))
            .collect();
        let s = fit_slope(&pts).unwrap();
        assert!((-1.05..=-0.95).contains(&s));
    }

    fn cell(strategy: StrategyKind, n: u64, rep: usize, sq_error: f64) -> Cell {
        Cell {
            strategy,
            n,
            rep,
            sq_error,
            violations: rep as u64,
            final_budget: rep as f64,
            constraint_ok: Some(rep != 0),
            decisions: Some(10),
            baseline_decisions: Some(1),
            min_budget: Some(-1.0),
            actions: Vec::new(),
        }
    }

    #[test]
    fn aggregation_and_regret() {
        let mut cells = Vec::new();
        for (i, n) in [10u64, 20, 40].into_iter().enumerate() {
            for rep in 0..2 {
                cells.push(cell(StrategyKind::SafeOracle, n, rep, 1.0 / n as f64));
                cells.push(cell(
                    StrategyKind::OnPolicy,
                    n,
                    rep,
                    1.0 / n as f64 + 0.5f64.powi(i as i32),
                ));
            }
        }
        let curves = aggregate(&cells, StrategyKind::SafeOracle);
        assert_eq!(curves[0].strategy, StrategyKind::SafeOracle);
        assert!(curves[0].points.iter().all(|p| p.regret == Some(0.0)));
        assert!((curves[0].mse_slope.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(curves[0].regret_slope, None);
        let on = &curves[1];
        assert!((on.points[1].regret.unwrap() - 0.5).abs() < 1e-12);
        assert!((on.regret_slope.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(on.points[0].reps, 2);
        assert_eq!(on.points[0].violations_max, 1);
        assert_eq!(on.points[0].constraint_rate, Some(0.5));
        assert_eq!(on.points[0].baseline_fraction, Some(0.1));
    }

    #[test]
    fn quantiles() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.5), 2.0);
        assert!((quantile(&xs, 0.1) - 0.4).abs() < 1e-12);
    }
}
