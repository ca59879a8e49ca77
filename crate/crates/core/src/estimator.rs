//! Running sufficient statistics, confidence widths and the
//! certainty-equivalence value estimator.

use serde::{Deserialize, Serialize};

use crate::allocation::{
    dag_allocation, normalizers_for_sigma, table_from_normalizers, AllocationTable,
};
use crate::env::{policy_value, ActionId, EpisodeRecord, LayeredMdp, StateId, TargetPolicy};

/// Per `(state, action)` counts and sums, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    offsets: Vec<usize>,
    count: Vec<u64>,
    reward_sum: Vec<f64>,
    reward_sq_sum: Vec<f64>,
    cost_sum: Vec<f64>,
    steps: u64,
    episodes: u64,
}

impl SufficientStats {
    pub fn new(mdp: &LayeredMdp) -> Self {
        let mut offsets = Vec::with_capacity(mdp.num_states() + 1);
        let mut acc = 0;
        for s in 0..mdp.num_states() {
            offsets.push(acc);
            acc += mdp.num_actions(s);
        }
        offsets.push(acc);
        Self {
            offsets,
            count: vec![0; acc],
            reward_sum: vec![0.0; acc],
            reward_sq_sum: vec![0.0; acc],
            cost_sum: vec![0.0; acc],
            steps: 0,
            episodes: 0,
        }
    }

    fn idx(&self, state: StateId, action: ActionId) -> usize {
        self.offsets[state] + action
    }

    pub fn num_actions(&self, state: StateId) -> usize {
        self.offsets[state + 1] - self.offsets[state]
    }

    pub fn count(&self, state: StateId, action: ActionId) -> u64 {
        self.count[self.idx(state, action)]
    }

    /// Counts of every action at `state`.
    pub fn counts(&self, state: StateId) -> &[u64] {
        &self.count[self.offsets[state]..self.offsets[state + 1]]
    }

    pub fn reward_sum(&self, state: StateId, action: ActionId) -> f64 {
        self.reward_sum[self.idx(state, action)]
    }

    pub fn reward_sq_sum(&self, state: StateId, action: ActionId) -> f64 {
        self.reward_sq_sum[self.idx(state, action)]
    }

    pub fn cost_sum(&self, state: StateId, action: ActionId) -> f64 {
        self.cost_sum[self.idx(state, action)]
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Adds one observation without closing an episode.
    pub fn record(&mut self, state: StateId, action: ActionId, reward: f64, cost: f64) {
        let i = self.idx(state, action);
        self.count[i] += 1;
        self.reward_sum[i] += reward;
        self.reward_sq_sum[i] += reward * reward;
        self.cost_sum[i] += cost;
        self.steps += 1;
    }

    /// Adds every step of `episode` and closes it.
    pub fn update(&mut self, episode: &EpisodeRecord) {
        for st in &episode.steps {
            self.record(st.state, st.action, st.reward, st.cost);
        }
        self.episodes += 1;
    }
}

/// Which confidence radius to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthMode {
    /// `(2 eta + 4 eta^2) sqrt(log(S A n (n+1) / delta) / (2T))`.
    #[default]
    Appendix,
    /// `L sqrt(log(S A n (n+1)) / T)`.
    Main,
    /// Identically zero, also for unvisited pairs.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthParams {
    pub mode: WidthMode,
    pub delta: f64,
    pub eta: f64,
    pub num_states: usize,
    pub num_actions: usize,
    /// Total sample budget `n`.
    pub budget: u64,
    pub horizon: usize,
    /// Multiplier on the radius subtracted from cost means.
    pub cost_scale: f64,
    /// Multiplier on the radius added to reward deviations.
    pub sigma_scale: f64,
}

impl WidthParams {
    /// Parameters for `mdp` at budget `n` with unit scale.
    pub fn for_mdp(mdp: &LayeredMdp, mode: WidthMode, delta: f64, budget: u64) -> Self {
        Self {
            mode,
            delta,
            eta: mdp.eta(),
            num_states: mdp.num_states(),
            num_actions: mdp.max_actions(),
            budget,
            horizon: mdp.num_levels(),
            cost_scale: 1.0,
            sigma_scale: 1.0,
        }
    }

    fn log_term(&self) -> f64 {
        let n = self.budget.max(1) as f64;
        let sa = (self.num_states * self.num_actions) as f64;
        let inner = sa * n * (n + 1.0);
        match self.mode {
            WidthMode::Appendix => (inner / self.delta).ln(),
            WidthMode::Main | WidthMode::Zero => inner.ln(),
        }
    }
}

/// Confidence radius after `t` visits, before scaling; `+inf` when `t == 0`
/// (except in [`WidthMode::Zero`]).
pub fn width(t: u64, params: &WidthParams) -> f64 {
    if params.mode == WidthMode::Zero {
        return 0.0;
    }
    if t == 0 {
        return f64::INFINITY;
    }
    let t = t as f64;
    let log = params.log_term().max(0.0);
    match params.mode {
        WidthMode::Appendix => {
            let c = 2.0 * params.eta + 4.0 * params.eta * params.eta;
            c * (log / (2.0 * t)).sqrt()
        }
        WidthMode::Main => params.horizon as f64 * (log / t).sqrt(),
        WidthMode::Zero => 0.0,
    }
}

/// Snapshot of the empirical moments and their confidence transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateView {
    pub mean_hat: Vec<Vec<f64>>,
    pub std_hat: Vec<Vec<f64>>,
    pub std_ucb: Vec<Vec<f64>>,
    pub cost_mean_hat: Vec<Vec<f64>>,
    pub cost_lcb: Vec<Vec<f64>>,
    /// Unscaled radius per pair.
    pub width: Vec<Vec<f64>>,
}

impl EstimateView {
    /// Lower confidence bound on the cost of a single pair.
    pub fn lcb(&self, state: StateId, action: ActionId) -> f64 {
        self.cost_lcb[state][action]
    }
}

struct PairEstimate {
    mean: f64,
    std: f64,
    cost_mean: f64,
}

fn pair_estimate(stats: &SufficientStats, s: StateId, a: ActionId) -> PairEstimate {
    let t = stats.count(s, a);
    if t == 0 {
        return PairEstimate {
            mean: 0.0,
            std: 0.0,
            cost_mean: 0.0,
        };
    }
    let tf = t as f64;
    let mean = stats.reward_sum(s, a) / tf;
    let var = (stats.reward_sq_sum(s, a) / tf - mean * mean).max(0.0);
    PairEstimate {
        mean,
        std: var.sqrt(),
        cost_mean: stats.cost_sum(s, a) / tf,
    }
}

/// `scale * radius`, keeping an infinite radius infinite even at scale 0.
pub fn scaled(scale: f64, radius: f64) -> f64 {
    if radius.is_infinite() {
        radius
    } else {
        scale * radius
    }
}

fn build_view(
    stats: &SufficientStats,
    params: &WidthParams,
    sigma: Option<&[Vec<f64>]>,
) -> EstimateView {
    let num_states = stats.offsets.len() - 1;
    let mut view = EstimateView {
        mean_hat: Vec::with_capacity(num_states),
        std_hat: Vec::with_capacity(num_states),
        std_ucb: Vec::with_capacity(num_states),
        cost_mean_hat: Vec::with_capacity(num_states),
        cost_lcb: Vec::with_capacity(num_states),
        width: Vec::with_capacity(num_states),
    };
    for s in 0..num_states {
        let k = stats.num_actions(s);
        let (mut mu, mut sd, mut ucb, mut cm, mut lcb, mut w) = (
            Vec::with_capacity(k),
            Vec::with_capacity(k),
            Vec::with_capacity(k),
            Vec::with_capacity(k),
            Vec::with_capacity(k),
            Vec::with_capacity(k),
        );
        for a in 0..k {
            let est = pair_estimate(stats, s, a);
            let beta = width(stats.count(s, a), params);
            let std = sigma.map_or(est.std, |table| table[s][a]);
            mu.push(est.mean);
            sd.push(std);
            ucb.push(std + scaled(params.sigma_scale, beta));
            cm.push(est.cost_mean);
            lcb.push(est.cost_mean - scaled(params.cost_scale, beta));
            w.push(beta);
        }
        view.mean_hat.push(mu);
        view.std_hat.push(sd);
        view.std_ucb.push(ucb);
        view.cost_mean_hat.push(cm);
        view.cost_lcb.push(lcb);
        view.width.push(w);
    }
    view
}

/// Empirical estimates from the running sums.
pub fn estimates(stats: &SufficientStats, params: &WidthParams) -> EstimateView {
    build_view(stats, params, None)
}

/// Same as [`estimates`] but with the reward deviations replaced by `sigma`.
pub fn estimates_with_sigma(
    stats: &SufficientStats,
    params: &WidthParams,
    sigma: &[Vec<f64>],
) -> EstimateView {
    build_view(stats, params, Some(sigma))
}

/// Plug-in value `Y(s) = sum_a w(a|s) [m(s,a) + gamma sum P Y(s')]`.
pub fn certainty_value(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    mean_source: impl Fn(StateId, ActionId) -> f64,
) -> Vec<f64> {
    policy_value(mdp, policy, mean_source)
}

/// Proportions for trees with `sigma` replaced by the upper bound `std_ucb`.
pub fn plug_in_allocation(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    view: &EstimateView,
) -> AllocationTable {
    let m = normalizers_for_sigma(mdp, policy, &view.std_ucb);
    table_from_normalizers(mdp, policy, &view.std_ucb, m)
}

/// DAG counterpart of [`plug_in_allocation`] built on the `B_0` sweep.
pub fn plug_in_dag_allocation(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    view: &EstimateView,
) -> AllocationTable {
    dag_allocation(mdp, policy, &view.std_ucb)
}
