//! Variance-optimal sampling proportions and problem-hardness quantities.
//!
//! For a tree the per-state normalizer is
//!
//! ```text
//! M(s)   = sum_a sqrt( pi(a|s)^2 [ sigma(s,a)^2 + gamma^2 sum_s' P(s'|s,a) M(s')^2 ] )
//! b*(a|s) = sqrt( pi(a|s)^2 [ ... ] ) / M(s)
//! ```
//!
//! computed bottom-up, so the last level reduces to `sum_a pi sigma`. On a
//! layered DAG the same recursion is run as a value-iteration style sweep
//! over every state ([`dag_b0`]); on trees the two coincide exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{true_value, ActionId, Channel, LayeredMdp, StateId, TargetPolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocationError {
    #[error("sum of pi * sigma is zero; proportions are undefined")]
    AllZeroMass,
    #[error("baseline cost mean is zero at state {state}")]
    BaselineCostZero { state: StateId },
    #[error("baseline cost value of the root is zero")]
    BaselineValueZero,
    #[error("risk parameter alpha = {0} outside (0, 1]")]
    InvalidAlpha(f64),
}

fn check_alpha(alpha: f64) -> Result<(), AllocationError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(AllocationError::InvalidAlpha(alpha))
    }
}

/// Per-state normalizers and sampling proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationTable {
    pub m: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub m_total: f64,
    pub m_min: f64,
}

impl AllocationTable {
    pub fn row(&self, state: StateId) -> &[f64] {
        &self.b[state]
    }
}

/// Unnormalized proportion `sqrt(pi^2 [sigma^2 + gamma^2 sum P M'^2])` for each action.
pub(crate) fn row_terms(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    state: StateId,
    sigma: &[Vec<f64>],
    child_norm: &[f64],
) -> Vec<f64> {
    let g2 = mdp.gamma() * mdp.gamma();
    policy
        .row(state)
        .iter()
        .enumerate()
        .map(|(a, &p)| {
            if p == 0.0 {
                return 0.0;
            }
            let future: f64 = mdp
                .transitions(state, a)
                .iter()
                .filter(|&&(_, q)| q > 0.0)
                .map(|&(t, q)| q * child_norm[t] * child_norm[t])
                .sum();
            let sd = sigma[state][a];
            (p * p * (sd * sd + g2 * future)).sqrt()
        })
        .collect()
}

/// Normalizes unnormalized terms into a probability row.
///
/// Infinite terms take all the mass, split evenly. A zero row falls back to
/// uniform over the support of `pi(.|s)`.
pub(crate) fn normalize_row(terms: &[f64], pi_row: &[f64]) -> Vec<f64> {
    let infinite = terms.iter().filter(|t| t.is_infinite()).count();
    if infinite > 0 {
        let w = 1.0 / infinite as f64;
        return terms
            .iter()
            .map(|t| if t.is_infinite() { w } else { 0.0 })
            .collect();
    }
    let total: f64 = terms.iter().sum();
    if total > 0.0 {
        return terms.iter().map(|t| t / total).collect();
    }
    let support = pi_row.iter().filter(|&&p| p > 0.0).count();
    pi_row
        .iter()
        .map(|&p| if p > 0.0 { 1.0 / support as f64 } else { 0.0 })
        .collect()
}

/// Level-by-level recursion for `M(s)` with an arbitrary standard-deviation table.
pub fn normalizers_for_sigma(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    sigma: &[Vec<f64>],
) -> Vec<f64> {
    let mut m = vec![0.0; mdp.num_states()];
    for s in mdp.backward_order() {
        m[s] = row_terms(mdp, policy, s, sigma, &m).iter().sum();
    }
    m
}

/// Builds the proportion table from normalizers `m` (tree recursion or DAG sweep).
pub fn table_from_normalizers(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    sigma: &[Vec<f64>],
    m: Vec<f64>,
) -> AllocationTable {
    let b = (0..mdp.num_states())
        .map(|s| normalize_row(&row_terms(mdp, policy, s, sigma, &m), policy.row(s)))
        .collect();
    let m_total = m.iter().sum();
    let m_min = m.iter().copied().fold(f64::INFINITY, f64::min);
    AllocationTable {
        m,
        b,
        m_total,
        m_min,
    }
}

/// Normalization factors `M(s)` using the environment's reward deviations.
pub fn compute_m(mdp: &LayeredMdp, policy: &TargetPolicy) -> Vec<f64> {
    normalizers_for_sigma(mdp, policy, &mdp.reward_stds())
}

/// Oracle proportions `b*(a|s)` with their normalizers.
pub fn compute_b_star(mdp: &LayeredMdp, policy: &TargetPolicy) -> AllocationTable {
    let sigma = mdp.reward_stds();
    let m = normalizers_for_sigma(mdp, policy, &sigma);
    table_from_normalizers(mdp, policy, &sigma, m)
}

/// Single-state closed form `pi(a) sigma(a) / sum pi sigma`.
pub fn bandit_b_star(pi: &[f64], sigma: &[f64]) -> Result<Vec<f64>, AllocationError> {
    let mass: Vec<f64> = pi.iter().zip(sigma).map(|(p, s)| p * s).collect();
    let total: f64 = mass.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(AllocationError::AllZeroMass);
    }
    Ok(mass.into_iter().map(|x| x / total).collect())
}

/// Backward sweep over all states, `L` iterations, for layered DAGs.
///
/// `B_L = 0`; iteration `t` recomputes every state from `B_{t+1}`. A state at
/// level `l` reads its value from iteration `l - 1`.
pub fn dag_b0_for_sigma(mdp: &LayeredMdp, policy: &TargetPolicy, sigma: &[Vec<f64>]) -> Vec<f64> {
    let horizon = mdp.num_levels();
    let num_states = mdp.num_states();
    let g2 = mdp.gamma() * mdp.gamma();
    let mut next = vec![0.0; num_states];
    let mut out = vec![0.0; num_states];
    for t in (0..horizon).rev() {
        let mut cur = vec![0.0; num_states];
        for (s, slot) in cur.iter_mut().enumerate() {
            let mut total = 0.0;
            for (a, &p) in policy.row(s).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let mut future = 0.0;
                for &(t2, q) in mdp.transitions(s, a) {
                    if q > 0.0 {
                        future += q * next[t2] * next[t2];
                    }
                }
                let sd = sigma[s][a];
                total += (p * p * (sd * sd + g2 * future)).sqrt();
            }
            *slot = total;
        }
        for s in mdp.states_at(t + 1) {
            out[*s] = cur[*s];
        }
        next = cur;
    }
    out
}

pub fn dag_b0(mdp: &LayeredMdp, policy: &TargetPolicy) -> Vec<f64> {
    dag_b0_for_sigma(mdp, policy, &mdp.reward_stds())
}

/// Proportions on a DAG built from the `B_0` sweep.
pub fn dag_allocation(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    sigma: &[Vec<f64>],
) -> AllocationTable {
    let b0 = dag_b0_for_sigma(mdp, policy, sigma);
    table_from_normalizers(mdp, policy, sigma, b0)
}

/// `|min(x, y)|`.
pub fn min_plus(x: f64, y: f64) -> f64 {
    x.min(y).abs()
}

/// `Delta_c(s,a) = max_a' mu_c(s,a') - mu_c(s,a)`.
pub fn cost_gaps(mdp: &LayeredMdp) -> Vec<Vec<f64>> {
    (0..mdp.num_states())
        .map(|s| {
            let means: Vec<f64> = (0..mdp.num_actions(s))
                .map(|a| mdp.action(s, a).cost.mean)
                .collect();
            let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            means.iter().map(|m| best - m).collect()
        })
        .collect()
}

/// `Delta^{c,alpha}(s,a) = (1 - alpha) mu_c(s,0) - mu_c(s,a)`.
pub fn alpha_cost_gaps(mdp: &LayeredMdp, alpha: f64) -> Vec<Vec<f64>> {
    (0..mdp.num_states())
        .map(|s| {
            let base = mdp.action(s, 0).cost.mean;
            (0..mdp.num_actions(s))
                .map(|a| (1.0 - alpha) * base - mdp.action(s, a).cost.mean)
                .collect()
        })
        .collect()
}

/// Weighting used inside the per-state hardness sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardnessWeights {
    /// `1/(alpha mu_c(s,0)) * sum_{a != 0} pi sigma min+{..}`.
    #[default]
    PiSigma,
    /// `sum_a b*(a|s) min+{..}`, no prefactor.
    OracleProportion,
}

/// Per-state `H_{*,(2)}(s)`.
pub fn hardness_h2(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    alpha: f64,
    weights: HardnessWeights,
) -> Result<Vec<f64>, AllocationError> {
    check_alpha(alpha)?;
    let gaps = cost_gaps(mdp);
    let b_star = match weights {
        HardnessWeights::OracleProportion => Some(compute_b_star(mdp, policy)),
        HardnessWeights::PiSigma => None,
    };
    (0..mdp.num_states())
        .map(|s| {
            let d = &gaps[s];
            let gap_term = |a: usize| min_plus(d[a], d[0] - d[a]);
            match &b_star {
                None => {
                    let base = mdp.action(s, 0).cost.mean;
                    if base.is_nan() || base <= 0.0 {
                        return Err(AllocationError::BaselineCostZero { state: s });
                    }
                    let sum: f64 = (1..mdp.num_actions(s))
                        .map(|a| policy.prob(s, a) * mdp.action(s, a).reward.std * gap_term(a))
                        .sum();
                    Ok(sum / (alpha * base))
                }
                Some(table) => Ok((0..mdp.num_actions(s))
                    .map(|a| table.b[s][a] * gap_term(a))
                    .sum()),
            }
        })
        .collect()
}

/// `H_{*,(1)} = (alpha V_c^{pi_0} + Delta_0) / (alpha V_c^{pi_0})`, `Delta_0 = |V_c^{b*} - V_c^{pi_0}|`.
pub fn hardness_h1(v_c_baseline: f64, v_c_oracle: f64, alpha: f64) -> f64 {
    let delta0 = (v_c_oracle - v_c_baseline).abs();
    (alpha * v_c_baseline + delta0) / (alpha * v_c_baseline)
}

/// Deterministic policy minimizing the root cost value, with that value.
/// Ties go to the lowest action index.
pub fn worst_cost_policy(mdp: &LayeredMdp) -> (Vec<ActionId>, f64) {
    let mut value = vec![0.0; mdp.num_states()];
    let mut choice = vec![0; mdp.num_states()];
    for s in mdp.backward_order() {
        let mut best = f64::INFINITY;
        for a in 0..mdp.num_actions(s) {
            let future: f64 = mdp
                .transitions(s, a)
                .iter()
                .map(|&(t, q)| q * value[t])
                .sum();
            let q = mdp.action(s, a).cost.mean + mdp.gamma() * future;
            if q < best {
                best = q;
                choice[s] = a;
            }
        }
        value[s] = best;
    }
    (choice, value[mdp.root()])
}

/// `C_sigma = max_{s,a} b*(a|s) / M(s)` over states with `M(s) > 0`.
pub fn c_sigma(table: &AllocationTable) -> f64 {
    table
        .m
        .iter()
        .zip(&table.b)
        .filter(|(m, _)| **m > 0.0)
        .flat_map(|(m, row)| row.iter().map(move |b| b / m))
        .fold(0.0, f64::max)
}

/// Outcome of the budget tractability check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tractability {
    pub tractable: bool,
    /// Smallest budget satisfying the condition; `None` means unbounded.
    pub n_min: Option<u64>,
}

/// Tractability from its ingredients: `ratio = V_c^{b-} / V_c^{pi_0}`.
///
/// `sqrt(n) >= (1/alpha)(1-r) / ((C_sigma/alpha)(1-r) - 1)`; a vacuous
/// constraint (`r >= 1`) is tractable at any budget.
pub fn tractability_from_parts(c_sigma: f64, ratio: f64, alpha: f64) -> Tractability {
    let slack = 1.0 - ratio;
    if slack <= 0.0 {
        return Tractability {
            tractable: true,
            n_min: Some(0),
        };
    }
    let denom = (c_sigma / alpha) * slack - 1.0;
    if denom <= 0.0 {
        return Tractability {
            tractable: false,
            n_min: None,
        };
    }
    let root_n = (slack / alpha) / denom;
    Tractability {
        tractable: true,
        n_min: Some((root_n * root_n).ceil() as u64),
    }
}

pub fn tractability_bound(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    alpha: f64,
) -> Result<Tractability, AllocationError> {
    check_alpha(alpha)?;
    let v0 = true_value(mdp, &TargetPolicy::baseline(mdp), Channel::Cost)[mdp.root()];
    if v0.is_nan() || v0 <= 0.0 {
        return Err(AllocationError::BaselineValueZero);
    }
    let (_, worst) = worst_cost_policy(mdp);
    let cs = c_sigma(&compute_b_star(mdp, policy));
    Ok(tractability_from_parts(cs, worst / v0, alpha))
}

/// Everything the harness reports about an environment's difficulty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub m_root: f64,
    pub m_total: f64,
    pub m_min: f64,
    pub h2_per_state: Vec<f64>,
    pub h2_total: f64,
    pub h1: f64,
    pub delta_c: Vec<Vec<f64>>,
    pub delta_c_alpha: Vec<Vec<f64>>,
    pub c_sigma: f64,
    pub baseline_cost_value: f64,
    pub oracle_cost_value: f64,
    pub worst_cost_value: f64,
    pub tractable: bool,
    pub n_min: Option<u64>,
}

/// Policy that samples actions in the oracle proportions.
fn oracle_policy(mdp: &LayeredMdp, table: &AllocationTable) -> TargetPolicy {
    TargetPolicy::new(mdp, table.b.clone()).expect("oracle rows are probability vectors")
}

pub fn complexity_report(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    alpha: f64,
) -> Result<ComplexityReport, AllocationError> {
    check_alpha(alpha)?;
    let table = compute_b_star(mdp, policy);
    let h2 = hardness_h2(mdp, policy, alpha, HardnessWeights::PiSigma)?;
    let root = mdp.root();
    let v0 = true_value(mdp, &TargetPolicy::baseline(mdp), Channel::Cost)[root];
    if v0.is_nan() || v0 <= 0.0 {
        return Err(AllocationError::BaselineValueZero);
    }
    let v_oracle = true_value(mdp, &oracle_policy(mdp, &table), Channel::Cost)[root];
    let (_, worst) = worst_cost_policy(mdp);
    let cs = c_sigma(&table);
    let tract = tractability_from_parts(cs, worst / v0, alpha);
    Ok(ComplexityReport {
        m_root: table.m[root],
        m_total: table.m_total,
        m_min: table.m_min,
        h2_total: h2.iter().sum(),
        h2_per_state: h2,
        h1: hardness_h1(v0, v_oracle, alpha),
        delta_c: cost_gaps(mdp),
        delta_c_alpha: alpha_cost_gaps(mdp, alpha),
        c_sigma: cs,
        baseline_cost_value: v0,
        oracle_cost_value: v_oracle,
        worst_cost_value: worst,
        tractable: tract.tractable,
        n_min: tract.n_min,
    })
}
