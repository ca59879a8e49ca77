//! Bandit instances from a CSV table with one row per arm.

use std::path::Path;

use thiserror::Error;

use crate::env::{EnvError, Gaussian, LayeredMdp};

const COLUMNS: [&str; 5] = ["arm", "reward_mean", "reward_std", "cost_mean", "cost_std"];

#[derive(Debug, Error)]
pub enum ArmTableError {
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("arm table has no rows")]
    EmptyTable,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Reads an arm table from `path`. Arm 0 is the baseline.
pub fn load_arm_table_csv(path: impl AsRef<Path>) -> Result<LayeredMdp, ArmTableError> {
    let reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    from_reader(reader)
}

/// Parses an arm table held in memory.
pub fn parse_arm_table(text: &str) -> Result<LayeredMdp, ArmTableError> {
    let reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    from_reader(reader)
}

fn from_reader<R: std::io::Read>(mut reader: csv::Reader<R>) -> Result<LayeredMdp, ArmTableError> {
    let headers = reader.headers()?.clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ArmTableError::MissingColumn(name.to_string()))?;
    }
    let mut arms = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize| -> Result<f64, ArmTableError> {
            let raw = record.get(idx[col]).unwrap_or("");
            raw.parse::<f64>().map_err(|_| ArmTableError::ParseError {
                line,
                message: format!("`{}` is not a number in column `{}`", raw, COLUMNS[col]),
            })
        };
        let arm = field(0)?;
        if arm != arms.len() as f64 {
            return Err(ArmTableError::ParseError {
                line,
                message: format!("expected arm {} but found {}", arms.len(), arm),
            });
        }
        arms.push((
            Gaussian::new(field(1)?, field(2)?),
            Gaussian::new(field(3)?, field(4)?),
        ));
    }
    if arms.is_empty() {
        return Err(ArmTableError::EmptyTable);
    }
    let eta = arms
        .iter()
        .flat_map(|(r, c)| [r.mean, c.mean])
        .fold(1.0, f64::max);
    let mdp = LayeredMdp::bandit(arms, eta)?;
    mdp.validate(crate::env::Topology::Bandit)?;
    Ok(mdp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows() {
        let mdp = parse_arm_table(
            "arm,reward_mean,reward_std,cost_mean,cost_std\n0,0.5,0.1,0.5,0\n1,0.7,2,0.2,0.1\n",
        )
        .unwrap();
        assert_eq!(mdp.num_actions(0), 2);
        assert_eq!(mdp.action(0, 1).reward, Gaussian::new(0.7, 2.0));
        assert_eq!(mdp.action(0, 1).cost, Gaussian::new(0.2, 0.1));
    }

    #[test]
    fn errors() {
        let err =
            parse_arm_table("arm,reward_mean,reward_std,cost_std\n0,0.5,0.1,0\n").unwrap_err();
        assert!(matches!(err, ArmTableError::MissingColumn(c) if c == "cost_mean"));
        let err = parse_arm_table("arm,reward_mean,reward_std,cost_mean,cost_std\n").unwrap_err();
        assert!(matches!(err, ArmTableError::EmptyTable));
        let err = parse_arm_table("arm,reward_mean,reward_std,cost_mean,cost_std\n0,0.5,x,0.5,0\n")
            .unwrap_err();
        assert!(matches!(err, ArmTableError::ParseError { line: 2, .. }));
    }

    #[test]
    fn column_order_is_free() {
        let mdp = parse_arm_table("cost_std,cost_mean,reward_std,reward_mean,arm\n0,0.4,1,0.3,0\n")
            .unwrap();
        assert_eq!(mdp.action(0, 0).cost.mean, 0.4);
        assert_eq!(mdp.action(0, 0).reward.mean, 0.3);
    }
}
