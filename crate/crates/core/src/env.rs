//! Layered tabular environments: bandits, tree MDPs and layered DAG MDPs.
//!
//! States are numbered globally `0..S` and carry a 1-based level. The root is
//! the unique level-1 state; episodes run from the root for exactly `L`
//! steps, one per level. Action `0` is always the baseline (safe) action.
//!
//! Rewards and costs are Gaussian per `(state, action)`. Means are bounded in
//! `[0, eta]`; samples are not clipped.
//!
//! A multi-start environment is expressed with an artificial root holding a
//! single action whose transition row is the start distribution.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type StateId = usize;
pub type ActionId = usize;

/// Tolerance on transition and policy row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("transition row of ({state}, {action}) is not a probability vector")]
    RowNotStochastic { state: StateId, action: ActionId },
    #[error("state {state} is reachable from more than one (state, action) pair")]
    TreeMultiParent { state: StateId },
    #[error("state {state} has a transition that does not go to the next level")]
    LevelSkip { state: StateId },
    #[error("negative standard deviation at ({state}, {action})")]
    NegativeStd { state: StateId, action: ActionId },
    #[error("mean at ({state}, {action}) lies outside [0, eta]")]
    MeanOutOfRange { state: StateId, action: ActionId },
    #[error("state {state} is not reachable from the root")]
    Unreachable { state: StateId },
    #[error("bandit environments need exactly one state at a single level")]
    NotABandit,
    #[error("malformed environment: {0}")]
    Malformed(String),
    #[error("selector returned action {action} which is not available at state {state}")]
    SelectorInvalidAction { state: StateId, action: ActionId },
    #[error("policy row for state {state} is not a probability vector over its actions")]
    PolicyRow { state: StateId },
}

/// Which structural class an environment is validated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Bandit,
    Tree,
    Dag,
}

impl Topology {
    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Bandit => "bandit",
            Topology::Tree => "tree",
            Topology::Dag => "dag",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian {
    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }

    /// Deterministic "distribution" with zero spread.
    pub fn point(mean: f64) -> Self {
        Self { mean, std: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub reward: Gaussian,
    pub cost: Gaussian,
    /// Sparse transition row `(next_state, probability)`; empty at the last level.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub next: Vec<(StateId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    /// 1-based level.
    pub level: usize,
    pub actions: Vec<ActionSpec>,
}

/// Serialized form of a [`LayeredMdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub eta: f64,
    pub states: Vec<StateSpec>,
}

fn default_gamma() -> f64 {
    1.0
}

/// Immutable layered environment with known transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct LayeredMdp {
    states: Vec<StateSpec>,
    gamma: f64,
    eta: f64,
    levels: Vec<Vec<StateId>>,
    root: StateId,
}

impl TryFrom<MdpDocument> for LayeredMdp {
    type Error = EnvError;

    fn try_from(doc: MdpDocument) -> Result<Self, EnvError> {
        LayeredMdp::new(doc.states, doc.gamma, doc.eta)
    }
}

impl From<LayeredMdp> for MdpDocument {
    fn from(mdp: LayeredMdp) -> Self {
        MdpDocument {
            gamma: mdp.gamma,
            eta: mdp.eta,
            states: mdp.states,
        }
    }
}

impl LayeredMdp {
    /// Builds an environment after structural checks (levels contiguous, one
    /// root, transition targets exist). Distributional and topological
    /// invariants are checked by [`LayeredMdp::validate`].
    pub fn new(states: Vec<StateSpec>, gamma: f64, eta: f64) -> Result<Self, EnvError> {
        if states.is_empty() {
            return Err(EnvError::Malformed("no states".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(EnvError::Malformed(format!("gamma {gamma} outside [0, 1]")));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(EnvError::Malformed(format!("eta {eta} must be positive")));
        }
        let num_levels = states.iter().map(|s| s.level).max().unwrap_or(0);
        let mut levels = vec![Vec::new(); num_levels];
        for (id, st) in states.iter().enumerate() {
            if st.level == 0 {
                return Err(EnvError::Malformed(format!("state {id} has level 0")));
            }
            if st.actions.is_empty() {
                return Err(EnvError::Malformed(format!("state {id} has no actions")));
            }
            for act in &st.actions {
                if let Some(&(bad, _)) = act.next.iter().find(|(t, _)| *t >= states.len()) {
                    return Err(EnvError::Malformed(format!(
                        "state {id} transitions to unknown state {bad}"
                    )));
                }
            }
            levels[st.level - 1].push(id);
        }
        if let Some(gap) = levels.iter().position(|l| l.is_empty()) {
            return Err(EnvError::Malformed(format!("level {} is empty", gap + 1)));
        }
        if levels[0].len() != 1 {
            return Err(EnvError::Malformed(format!(
                "expected a single root, found {} level-1 states",
                levels[0].len()
            )));
        }
        let root = levels[0][0];
        Ok(Self {
            states,
            gamma,
            eta,
            levels,
            root,
        })
    }

    /// Single-state environment; arm 0 is the baseline.
    pub fn bandit(arms: Vec<(Gaussian, Gaussian)>, eta: f64) -> Result<Self, EnvError> {
        let actions = arms
            .into_iter()
            .map(|(reward, cost)| ActionSpec {
                reward,
                cost,
                next: Vec::new(),
            })
            .collect();
        Self::new(vec![StateSpec { level: 1, actions }], 1.0, eta)
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    /// Horizon `L`.
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn root(&self) -> StateId {
        self.root
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// 1-based level of `state`.
    pub fn level(&self, state: StateId) -> usize {
        self.states[state].level
    }

    /// States at 1-based `level`.
    pub fn states_at(&self, level: usize) -> &[StateId] {
        &self.levels[level - 1]
    }

    pub fn num_actions(&self, state: StateId) -> usize {
        self.states[state].actions.len()
    }

    pub fn max_actions(&self) -> usize {
        self.states
            .iter()
            .map(|s| s.actions.len())
            .max()
            .unwrap_or(0)
    }

    pub fn action(&self, state: StateId, action: ActionId) -> &ActionSpec {
        &self.states[state].actions[action]
    }

    pub fn transitions(&self, state: StateId, action: ActionId) -> &[(StateId, f64)] {
        &self.states[state].actions[action].next
    }

    pub fn state_specs(&self) -> &[StateSpec] {
        &self.states
    }

    /// Number of `(state, action)` pairs.
    pub fn num_pairs(&self) -> usize {
        self.states.iter().map(|s| s.actions.len()).sum()
    }

    /// States ordered from the last level up to the root; the order in which
    /// backward recursions visit them.
    pub fn backward_order(&self) -> impl Iterator<Item = StateId> + '_ {
        self.levels.iter().rev().flat_map(|l| l.iter().copied())
    }

    /// Table of reward standard deviations, indexed `[state][action]`.
    pub fn reward_stds(&self) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .map(|s| s.actions.iter().map(|a| a.reward.std).collect())
            .collect()
    }

    /// Checks every invariant required by `topology`.
    pub fn validate(&self, topology: Topology) -> Result<(), EnvError> {
        if topology == Topology::Bandit && (self.num_levels() != 1 || self.num_states() != 1) {
            return Err(EnvError::NotABandit);
        }
        let last = self.num_levels();
        let mut parents = vec![0usize; self.num_states()];
        for (s, st) in self.states.iter().enumerate() {
            for (a, act) in st.actions.iter().enumerate() {
                if act.reward.std < 0.0 || act.cost.std < 0.0 {
                    return Err(EnvError::NegativeStd {
                        state: s,
                        action: a,
                    });
                }
                let in_range = |m: f64| (0.0..=self.eta).contains(&m);
                if !in_range(act.reward.mean) || !in_range(act.cost.mean) {
                    return Err(EnvError::MeanOutOfRange {
                        state: s,
                        action: a,
                    });
                }
                if st.level == last {
                    if !act.next.is_empty() {
                        return Err(EnvError::LevelSkip { state: s });
                    }
                    continue;
                }
                let mut total = 0.0;
                for &(t, p) in &act.next {
                    if p.is_nan() || p < 0.0 {
                        return Err(EnvError::RowNotStochastic {
                            state: s,
                            action: a,
                        });
                    }
                    if self.states[t].level != st.level + 1 {
                        return Err(EnvError::LevelSkip { state: s });
                    }
                    total += p;
                    if p > 0.0 {
                        parents[t] += 1;
                    }
                }
                if (total - 1.0).abs() > ROW_SUM_TOL {
                    return Err(EnvError::RowNotStochastic {
                        state: s,
                        action: a,
                    });
                }
            }
        }
        if topology == Topology::Tree {
            if let Some(s) = (0..self.num_states()).find(|&s| parents[s] > 1) {
                return Err(EnvError::TreeMultiParent { state: s });
            }
            if let Some(s) = (0..self.num_states()).find(|&s| s != self.root && parents[s] == 0) {
                return Err(EnvError::Unreachable { state: s });
            }
        }
        Ok(())
    }
}

/// Fixed stochastic policy `pi(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPolicy {
    probs: Vec<Vec<f64>>,
}

impl TargetPolicy {
    pub fn new(mdp: &LayeredMdp, probs: Vec<Vec<f64>>) -> Result<Self, EnvError> {
        if probs.len() != mdp.num_states() {
            return Err(EnvError::Malformed(format!(
                "policy has {} rows for {} states",
                probs.len(),
                mdp.num_states()
            )));
        }
        for (s, row) in probs.iter().enumerate() {
            let ok = row.len() == mdp.num_actions(s)
                && row.iter().all(|&p| p >= 0.0)
                && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL;
            if !ok {
                return Err(EnvError::PolicyRow { state: s });
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(mdp: &LayeredMdp) -> Self {
        let probs = (0..mdp.num_states())
            .map(|s| {
                let k = mdp.num_actions(s);
                vec![1.0 / k as f64; k]
            })
            .collect();
        Self { probs }
    }

    /// One-hot policy choosing `actions[s]` in state `s`.
    pub fn deterministic(mdp: &LayeredMdp, actions: &[ActionId]) -> Result<Self, EnvError> {
        let probs = (0..mdp.num_states())
            .map(|s| {
                let mut row = vec![0.0; mdp.num_actions(s)];
                match row.get_mut(actions[s]) {
                    Some(p) => *p = 1.0,
                    None => {
                        return Err(EnvError::SelectorInvalidAction {
                            state: s,
                            action: actions[s],
                        })
                    }
                }
                Ok(row)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { probs })
    }

    /// The baseline policy `pi_0`: always action 0.
    pub fn baseline(mdp: &LayeredMdp) -> Self {
        Self::deterministic(mdp, &vec![0; mdp.num_states()]).expect("action 0 always exists")
    }

    pub fn prob(&self, state: StateId, action: ActionId) -> f64 {
        self.probs[state][action]
    }

    pub fn row(&self, state: StateId) -> &[f64] {
        &self.probs[state]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Reward,
    Cost,
}

/// Backward recursion `V(s) = sum_a w(a|s) [mean(s,a) + gamma sum_s' P V(s')]`.
///
/// Shared by the exact value and the plug-in estimator.
pub fn policy_value(
    mdp: &LayeredMdp,
    policy: &TargetPolicy,
    mean: impl Fn(StateId, ActionId) -> f64,
) -> Vec<f64> {
    let mut value = vec![0.0; mdp.num_states()];
    for s in mdp.backward_order() {
        let mut v = 0.0;
        for (a, &p) in policy.row(s).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let future: f64 = mdp
                .transitions(s, a)
                .iter()
                .map(|&(t, q)| q * value[t])
                .sum();
            v += p * (mean(s, a) + mdp.gamma() * future);
        }
        value[s] = v;
    }
    value
}

/// Exact value of `policy` on the chosen channel for every state.
pub fn true_value(mdp: &LayeredMdp, policy: &TargetPolicy, channel: Channel) -> Vec<f64> {
    policy_value(mdp, policy, |s, a| {
        let act = mdp.action(s, a);
        match channel {
            Channel::Reward => act.reward.mean,
            Channel::Cost => act.cost.mean,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub cost: f64,
    /// `None` after the last level.
    pub next: Option<StateId>,
}

/// Draws one reward, one cost and the successor state, in that order.
pub fn sample_step<R: Rng + ?Sized>(
    mdp: &LayeredMdp,
    state: StateId,
    action: ActionId,
    rng: &mut R,
) -> StepOutcome {
    let act = mdp.action(state, action);
    let zr: f64 = rng.sample(StandardNormal);
    let zc: f64 = rng.sample(StandardNormal);
    let reward = act.reward.mean + act.reward.std * zr;
    let cost = act.cost.mean + act.cost.std * zc;
    let next = if act.next.is_empty() {
        None
    } else {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = act.next[act.next.len() - 1].0;
        for &(t, p) in &act.next {
            acc += p;
            if u < acc {
                chosen = t;
                break;
            }
        }
        Some(chosen)
    };
    StepOutcome { reward, cost, next }
}

/// One `(S_l, A_l, R_l, C_l)` tuple of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: StateId,
    pub action: ActionId,
    pub reward: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub steps: Vec<Step>,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Source of randomness for environment draws, keyed by `(state, action)`.
///
/// Keying lets simulations share one noise stream per pair across different
/// behavior policies (common random numbers).
pub trait NoiseSource {
    type Stream: RngCore;

    fn stream(&mut self, state: StateId, action: ActionId) -> &mut Self::Stream;
}

/// Every pair draws from the same generator.
pub struct SingleStream<'a, R>(pub &'a mut R);

impl<R: RngCore> NoiseSource for SingleStream<'_, R> {
    type Stream = R;

    fn stream(&mut self, _state: StateId, _action: ActionId) -> &mut R {
        self.0
    }
}

/// Rolls one episode of length `L` from the root with a single generator.
pub fn run_episode<R: RngCore>(
    mdp: &LayeredMdp,
    selector: impl FnMut(StateId) -> ActionId,
    rng: &mut R,
) -> Result<EpisodeRecord, EnvError> {
    run_episode_with(mdp, selector, &mut SingleStream(rng))
}

/// Rolls one episode drawing each step's noise from `noise.stream(s, a)`.
pub fn run_episode_with<N: NoiseSource>(
    mdp: &LayeredMdp,
    mut selector: impl FnMut(StateId) -> ActionId,
    noise: &mut N,
) -> Result<EpisodeRecord, EnvError> {
    let mut steps = Vec::with_capacity(mdp.num_levels());
    let mut state = Some(mdp.root());
    while let Some(s) = state {
        let a = selector(s);
        if a >= mdp.num_actions(s) {
            return Err(EnvError::SelectorInvalidAction {
                state: s,
                action: a,
            });
        }
        let out = sample_step(mdp, s, a, noise.stream(s, a));
        steps.push(Step {
            state: s,
            action: a,
            reward: out.reward,
            cost: out.cost,
        });
        state = out.next;
    }
    Ok(EpisodeRecord { steps })
}
