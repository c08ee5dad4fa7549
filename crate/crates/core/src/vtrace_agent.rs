//! Off-policy actor-critic learning core.
//!
//! An [`Episode`] is produced by an actor following a (possibly stale)
//! behaviour policy `μ`. The learner evaluates it under the current target
//! policy `π_θ` and critic `V_w`:
//!
//! ```text
//! ρ_t  = min(ρ̄, π(a_t|s_t) / μ(a_t|s_t))
//! c_t  = min(c̄, ρ_t)
//! δ_t  = ρ_t (r_t + γ V(s_{t+1}) − V(s_t))
//! v_t  = V(s_t) + δ_t + γ c_t (v_{t+1} − V(s_{t+1})),   v_n = V(s_n)
//! A_t  = ρ_t (r_t + γ v_{t+1} − V(s_t))
//! ```
//!
//! The actor ascends `Σ_t log π(a_t|s_t) A_t + β H(π(·|s_t))` and the critic
//! descends `½ Σ_t (v_t − V(s_t))²`, with `A_t` and `v_t` held constant.
//! Vanilla (A3C-style) mode replaces both with one-step TD quantities and
//! no importance weighting.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::neural::{critic_forward, policy_forward, softmax, Gradients, ParamSet};
use crate::stream_env::StreamState;
use crate::{Error, Result};

/// Tolerance on `Σ p = 1` for behaviour-policy rows.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

/// Piecewise-constant entropy weight over training.
///
/// `K` phases split the run into `K` equal spans of epochs, so
/// `[2, 1.5, 1, 0.5, 0.1]` over 100 000 epochs means β = 2 for the first
/// 20 000 epochs, 1.5 for the next 20 000 and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropySchedule {
    phases: Vec<f64>,
}

impl EntropySchedule {
    pub fn new(phases: Vec<f64>) -> Result<Self> {
        if phases.is_empty() || !phases.iter().all(|b| b.is_finite() && *b >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "entropy schedule needs non-negative weights, got {phases:?}"
            )));
        }
        Ok(Self { phases })
    }

    pub fn constant(beta: f64) -> Result<Self> {
        Self::new(vec![beta])
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Weight in effect at `epoch` of a run of `total_epochs`.
    pub fn beta_at(&self, epoch: usize, total_epochs: usize) -> f64 {
        let k = self.phases.len();
        if k == 1 || total_epochs == 0 {
            return self.phases[0];
        }
        let phase = (epoch as u128 * k as u128 / total_epochs as u128) as usize;
        self.phases[phase.min(k - 1)]
    }
}

impl Default for EntropySchedule {
    fn default() -> Self {
        Self {
            phases: vec![1.0, 0.75, 0.5, 0.25, 0.1],
        }
    }
}

impl fmt::Display for EntropySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.phases.iter().map(|b| b.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for EntropySchedule {
    type Err = Error;

    /// Accepts a comma-separated list (`"3,2,1,0.5,0.1"`) or a repeated
    /// constant (`"0.1x5"`, `"0.1 (x5)"`, `"0.1"`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad entropy schedule {s:?}"));
        let s = s.trim();
        if let Some((value, count)) = s.split_once(['x', '×']) {
            let value = value.trim().trim_end_matches('(').trim();
            let count = count.trim().trim_end_matches(')').trim();
            let beta: f64 = value.parse().map_err(|_| bad())?;
            let count: usize = count.parse().map_err(|_| bad())?;
            if count == 0 {
                return Err(bad());
            }
            return Self::new(vec![beta; count]);
        }
        let phases = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        Self::new(phases)
    }
}

/// Learning hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy: EntropySchedule,
    pub rho_bar: f64,
    pub c_bar: f64,
    pub epochs: usize,
    pub actors: usize,
    /// Learner updates between parameter publications to the actors.
    pub sync_interval: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            entropy: EntropySchedule::default(),
            rho_bar: 1.0,
            c_bar: 1.0,
            epochs: 100_000,
            actors: 1,
            sync_interval: 1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("rho_bar", self.rho_bar),
            ("c_bar", self.c_bar),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.actors == 0 || self.sync_interval == 0 {
            return bad("actors and sync_interval must be positive".into());
        }
        Ok(())
    }
}

/// One actor rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<StreamState>,
    pub actions: Vec<usize>,
    /// Full behaviour distribution `μ(·|s_t)` at every step.
    pub behaviour_probs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// State after the last action.
    pub bootstrap_state: StreamState,
    /// The video finished, so the value after the last step is zero.
    pub terminal: bool,
    /// Number of learner updates behind the behaviour parameters.
    pub policy_version: u64,
    pub actor: usize,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        if n == 0 {
            return Err(Error::InvalidArgument("episode has no steps".into()));
        }
        if self.states.len() != n || self.behaviour_probs.len() != n || self.rewards.len() != n {
            return Err(Error::Dimension(format!(
                "episode columns differ in length: {} states, {} actions, {} probs, {} rewards",
                self.states.len(),
                n,
                self.behaviour_probs.len(),
                self.rewards.len()
            )));
        }
        for (t, (row, &a)) in self.behaviour_probs.iter().zip(&self.actions).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "behaviour probabilities at step {t} sum to {sum}"
                )));
            }
            if a >= row.len() {
                return Err(Error::ActionOutOfRange {
                    action: a,
                    levels: row.len(),
                });
            }
        }
        if !self.rewards.iter().all(|r| r.is_finite()) {
            return Err(Error::NonFinite("episode rewards".into()));
        }
        Ok(())
    }

    /// `μ(a_t|s_t)` for every step.
    pub fn behaviour_action_probs(&self) -> Vec<f64> {
        self.behaviour_probs
            .iter()
            .zip(&self.actions)
            .map(|(row, &a)| row[a])
            .collect()
    }
}

/// Per-step V-trace quantities for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct VTraceResult {
    pub targets: Vec<f64>,
    pub rhos: Vec<f64>,
    pub cs: Vec<f64>,
    pub deltas: Vec<f64>,
    pub pg_advantages: Vec<f64>,
    /// `V(s_t)` for every step.
    pub values: Vec<f64>,
    /// `V(s_n)`, or 0 for a terminal episode.
    pub bootstrap_value: f64,
}

/// Raw inputs of the V-trace recursion.
#[derive(Debug, Clone, Copy)]
pub struct VTraceInputs<'a> {
    pub rewards: &'a [f64],
    pub values: &'a [f64],
    pub bootstrap_value: f64,
    /// `π(a_t|s_t)` under the target policy.
    pub target_action_probs: &'a [f64],
    /// `μ(a_t|s_t)` under the behaviour policy.
    pub behaviour_action_probs: &'a [f64],
    pub gamma: f64,
    pub rho_bar: f64,
    pub c_bar: f64,
}

/// Evaluates the V-trace recursion back to front.
pub fn vtrace_from_parts(inputs: VTraceInputs<'_>) -> Result<VTraceResult> {
    let n = inputs.rewards.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty episode".into()));
    }
    if inputs.values.len() != n
        || inputs.target_action_probs.len() != n
        || inputs.behaviour_action_probs.len() != n
    {
        return Err(Error::Dimension("v-trace inputs differ in length".into()));
    }
    let gamma = inputs.gamma;
    let mut rhos = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for t in 0..n {
        let mu = inputs.behaviour_action_probs[t];
        if mu.is_nan() || mu <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "behaviour probability of the taken action at step {t} is {mu}"
            )));
        }
        let rho = inputs.rho_bar.min(inputs.target_action_probs[t] / mu);
        rhos.push(rho);
        cs.push(inputs.c_bar.min(rho));
    }

    let value_next = |t: usize| {
        if t + 1 < n {
            inputs.values[t + 1]
        } else {
            inputs.bootstrap_value
        }
    };
    let deltas: Vec<f64> = (0..n)
        .map(|t| rhos[t] * (inputs.rewards[t] + gamma * value_next(t) - inputs.values[t]))
        .collect();

    let mut targets = vec![0.0; n];
    let mut next_target = inputs.bootstrap_value;
    for t in (0..n).rev() {
        targets[t] = inputs.values[t] + deltas[t] + gamma * cs[t] * (next_target - value_next(t));
        next_target = targets[t];
    }

    let pg_advantages: Vec<f64> = (0..n)
        .map(|t| {
            let v_next = if t + 1 < n {
                targets[t + 1]
            } else {
                inputs.bootstrap_value
            };
            rhos[t] * (inputs.rewards[t] + gamma * v_next - inputs.values[t])
        })
        .collect();

    let result = VTraceResult {
        targets,
        rhos,
        cs,
        deltas,
        pg_advantages,
        values: inputs.values.to_vec(),
        bootstrap_value: inputs.bootstrap_value,
    };
    let finite = [
        &result.targets,
        &result.rhos,
        &result.deltas,
        &result.pg_advantages,
    ]
    .iter()
    .all(|col| col.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::NonFinite("v-trace intermediate".into()));
    }
    Ok(result)
}

/// Critic values of every state and the bootstrap value.
pub fn critic_values(episode: &Episode, w: &ParamSet) -> Result<(Vec<f64>, f64)> {
    let values = episode
        .states
        .iter()
        .map(|s| critic_forward(w, &s.features()))
        .collect::<Result<Vec<_>>>()?;
    let bootstrap = if episode.terminal {
        0.0
    } else {
        critic_forward(w, &episode.bootstrap_state.features())?
    };
    Ok((values, bootstrap))
}

/// `π_θ(a_t|s_t)` for every step of the episode.
pub fn target_action_probs(episode: &Episode, theta: &ParamSet) -> Result<Vec<f64>> {
    episode
        .states
        .iter()
        .zip(&episode.actions)
        .map(|(s, &a)| Ok(policy_forward(theta, &s.features())?[a]))
        .collect()
}

/// V-trace targets and advantages of `episode` under target policy `theta`
/// and critic `w`.
pub fn compute_vtrace(
    episode: &Episode,
    theta: &ParamSet,
    w: &ParamSet,
    hp: &Hyperparams,
) -> Result<VTraceResult> {
    episode.validate()?;
    let (values, bootstrap_value) = critic_values(episode, w)?;
    let target = target_action_probs(episode, theta)?;
    let behaviour = episode.behaviour_action_probs();
    vtrace_from_parts(VTraceInputs {
        rewards: &episode.rewards,
        values: &values,
        bootstrap_value,
        target_action_probs: &target,
        behaviour_action_probs: &behaviour,
        gamma: hp.gamma,
        rho_bar: hp.rho_bar,
        c_bar: hp.c_bar,
    })
}

/// One-step TD advantages `r_t + γ V(s_{t+1}) − V(s_t)` with no importance
/// weighting.
pub fn vanilla_advantages(episode: &Episode, w: &ParamSet, gamma: f64) -> Result<Vec<f64>> {
    let (values, bootstrap) = critic_values(episode, w)?;
    Ok(td_terms(&episode.rewards, &values, bootstrap, gamma)
        .map(|(target, v)| target - v)
        .collect())
}

/// One-step bootstrapped critic targets `r_t + γ V(s_{t+1})`.
pub fn vanilla_targets(episode: &Episode, w: &ParamSet, gamma: f64) -> Result<Vec<f64>> {
    let (values, bootstrap) = critic_values(episode, w)?;
    Ok(td_terms(&episode.rewards, &values, bootstrap, gamma)
        .map(|(target, _)| target)
        .collect())
}

fn td_terms<'a>(
    rewards: &'a [f64],
    values: &'a [f64],
    bootstrap: f64,
    gamma: f64,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    let n = rewards.len();
    (0..n).map(move |t| {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        (rewards[t] + gamma * next, values[t])
    })
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || probs.iter().any(|&p| p.is_nan() || p < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "not a probability distribution (sum {sum})"
        )));
    }
    Ok(probs
        .iter()
        .filter(|&&p| p > 0.0)
        .fold(0.0, |h, &p| h - p * p.ln()))
}

/// Gradient w.r.t. the logits of `A·log π(a) + β·H(π)` for
/// `π = softmax(logits)`.
fn policy_logit_gradient(probs: &[f64], action: usize, advantage: f64, beta: f64) -> Vec<f64> {
    let h = if beta != 0.0 {
        -probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    } else {
        0.0
    };
    probs
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let indicator = if k == action { 1.0 } else { 0.0 };
            let pg = advantage * (indicator - p);
            // dH/dz_k = -p_k (ln p_k + H)
            let ent = if beta != 0.0 && p > 0.0 {
                -beta * p * (p.ln() + h)
            } else {
                0.0
            };
            pg + ent
        })
        .collect()
}

/// Gradient (ascent direction) of
/// `Σ_t [log π_θ(a_t|s_t) · advantages_t + β H(π_θ(·|s_t))]` w.r.t. θ.
pub fn actor_gradients(
    episode: &Episode,
    advantages: &[f64],
    theta: &ParamSet,
    beta: f64,
) -> Result<Gradients> {
    if advantages.len() != episode.len() || episode.states.len() != episode.len() {
        return Err(Error::Dimension(format!(
            "{} advantages for an episode of {} steps",
            advantages.len(),
            episode.len()
        )));
    }
    let mut grads = Gradients::zeros_like(theta);
    for ((state, &action), &adv) in episode.states.iter().zip(&episode.actions).zip(advantages) {
        let pass = theta.forward(&state.features())?;
        let probs = softmax(pass.output());
        if action >= probs.len() {
            return Err(Error::ActionOutOfRange {
                action,
                levels: probs.len(),
            });
        }
        let upstream = policy_logit_gradient(&probs, action, adv, beta);
        theta.backward_into(&pass, &upstream, &mut grads)?;
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("actor gradient".into()));
    }
    Ok(grads)
}

/// Gradient (descent direction) of `½ Σ_t (targets_t − V_w(s_t))²` w.r.t. w.
pub fn critic_gradients(episode: &Episode, targets: &[f64], w: &ParamSet) -> Result<Gradients> {
    if targets.len() != episode.states.len() {
        return Err(Error::Dimension(format!(
            "{} targets for {} states",
            targets.len(),
            episode.states.len()
        )));
    }
    let mut grads = Gradients::zeros_like(w);
    for (state, &target) in episode.states.iter().zip(targets) {
        let pass = w.forward(&state.features())?;
        let residual = pass.output()[0] - target;
        w.backward_into(&pass, &[residual], &mut grads)?;
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("critic gradient".into()));
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    /// Draw from the policy distribution (training).
    Sample,
    /// Most probable level, lowest index on ties (evaluation).
    Greedy,
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a discrete distribution.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn select_from_probs<R: Rng + ?Sized>(probs: &[f64], mode: SelectMode, rng: &mut R) -> usize {
    match mode {
        SelectMode::Sample => sample_index(probs, rng),
        SelectMode::Greedy => argmax(probs),
    }
}

pub fn select_action<R: Rng + ?Sized>(
    theta: &ParamSet,
    state: &StreamState,
    mode: SelectMode,
    rng: &mut R,
) -> Result<usize> {
    let probs = policy_forward(theta, &state.features())?;
    Ok(select_from_probs(&probs, mode, rng))
}
