//! Independent reference implementations shared by the integration tests.
//! None of these call into the code they check beyond plain data access.

#![allow(dead_code, clippy::too_many_arguments)]

use abr_vtrace::neural::ParamSet;
use abr_vtrace::stream_env::{StreamState, VideoSpec, HISTORY_LEN};
use abr_vtrace::vtrace_agent::Episode;
use rand::Rng;

/// Direct evaluation of the n-step V-trace target
/// `v_s = V(s_s) + Σ_{t≥s} γ^{t−s} (Π_{s≤i<t} c_i) δ_t`
/// and of the policy-gradient advantage, in O(n²).
pub fn vtrace_direct(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    pi: &[f64],
    mu: &[f64],
    gamma: f64,
    rho_bar: f64,
    c_bar: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let value_at = |t: usize| if t < n { values[t] } else { bootstrap };
    let ratio = |t: usize| pi[t] / mu[t];
    let rho = |t: usize| ratio(t).min(rho_bar);
    let c = |t: usize| ratio(t).min(rho_bar).min(c_bar);
    let delta = |t: usize| rho(t) * (rewards[t] + gamma * value_at(t + 1) - values[t]);

    let targets: Vec<f64> = (0..n)
        .map(|s| {
            let mut sum = 0.0;
            for t in s..n {
                let trace: f64 = (s..t).map(c).product();
                sum += gamma.powi((t - s) as i32) * trace * delta(t);
            }
            values[s] + sum
        })
        .collect();
    let advantages = (0..n)
        .map(|s| {
            let next = if s + 1 < n { targets[s + 1] } else { bootstrap };
            rho(s) * (rewards[s] + gamma * next - values[s])
        })
        .collect();
    (targets, advantages)
}

/// `Σ_{t≥j} γ^{t−j} r_t + γ^{n−j} V(s_n)` for every `j`.
pub fn discounted_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|j| {
            let partial: f64 = (j..n)
                .map(|t| gamma.powi((t - j) as i32) * rewards[t])
                .sum();
            partial + gamma.powi((n - j) as i32) * bootstrap
        })
        .collect()
}

/// Plain MLP forward pass reading the weights straight out of `params`:
/// ReLU on hidden layers, identity on the output. Also returns every hidden
/// pre-activation.
pub fn mlp_forward(params: &ParamSet, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut x = input.to_vec();
    let mut pre = Vec::new();
    let last = params.layers().len() - 1;
    for (i, layer) in params.layers().iter().enumerate() {
        let mut out = vec![0.0; layer.outputs];
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            *slot = layer.biases[o] + row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
        }
        if i < last {
            pre.extend(&out);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        x = out;
    }
    (x, pre)
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// `Σ_t [log π(a_t|s_t) A_t + β H(π(·|s_t))]`.
pub fn actor_objective(params: &ParamSet, episode: &Episode, advantages: &[f64], beta: f64) -> f64 {
    episode
        .states
        .iter()
        .zip(&episode.actions)
        .zip(advantages)
        .map(|((s, &a), &adv)| {
            let logp = log_softmax(&mlp_forward(params, &s.features()).0);
            let h: f64 = -logp.iter().map(|l| l.exp() * l).sum::<f64>();
            logp[a] * adv + beta * h
        })
        .sum()
}

/// `½ Σ_t (v_t − V(s_t))²`.
pub fn critic_objective(params: &ParamSet, episode: &Episode, targets: &[f64]) -> f64 {
    episode
        .states
        .iter()
        .zip(targets)
        .map(|(s, &v)| 0.5 * (v - mlp_forward(params, &s.features()).0[0]).powi(2))
        .sum()
}

/// Central differences of `f` with step `h` in every parameter.
pub fn finite_difference(params: &ParamSet, h: f64, f: impl Fn(&ParamSet) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.num_params())
        .map(|i| {
            let orig = *p.param_mut(i);
            *p.param_mut(i) = orig + h;
            let up = f(&p);
            *p.param_mut(i) = orig - h;
            let down = f(&p);
            *p.param_mut(i) = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest entrywise `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// A state with every feature randomised, including the history padding.
pub fn random_state<R: Rng>(rng: &mut R, levels: usize) -> StreamState {
    let mut throughput = [0.0; HISTORY_LEN];
    let mut download = [0.0; HISTORY_LEN];
    let filled = rng.random_range(0..=HISTORY_LEN);
    for k in 0..filled {
        throughput[k] = rng.random_range(0.1..8.0);
        download[k] = rng.random_range(0.2..12.0);
    }
    let chunk_index = rng.random_range(0..48);
    StreamState {
        last_level: rng.random_range(0..levels),
        buffer: rng.random_range(0.0..60.0),
        throughput_history: throughput,
        download_time_history: download,
        next_chunk_sizes: (0..levels)
            .map(|l| 1.2 * (l + 1) as f64 + rng.random_range(0.0..0.5))
            .collect(),
        remaining_fraction: (48 - chunk_index) as f64 / 48.0,
        chunk_index,
    }
}

/// Episode of random states, actions, behaviour distributions and rewards.
pub fn random_episode<R: Rng>(rng: &mut R, len: usize, levels: usize, terminal: bool) -> Episode {
    let states: Vec<StreamState> = (0..len).map(|_| random_state(rng, levels)).collect();
    let behaviour_probs: Vec<Vec<f64>> =
        (0..len).map(|_| random_distribution(rng, levels)).collect();
    let actions = (0..len).map(|_| rng.random_range(0..levels)).collect();
    Episode {
        states,
        actions,
        behaviour_probs,
        rewards: (0..len).map(|_| rng.random_range(-10.0..5.0)).collect(),
        bootstrap_state: random_state(rng, levels),
        terminal,
        policy_version: 0,
        actor: 0,
    }
}

/// Strictly positive distribution.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

/// Parameters with every weight and bias drawn from `[-scale, scale]`.
pub fn random_params<R: Rng>(rng: &mut R, sizes: &[usize], scale: f64) -> ParamSet {
    let mut p = ParamSet::zeros(sizes).unwrap();
    for i in 0..p.num_params() {
        *p.param_mut(i) = rng.random_range(-scale..scale);
    }
    p
}

/// Smallest |hidden pre-activation| over the episode's states, to keep
/// finite differences away from ReLU kinks.
pub fn min_abs_preactivation(params: &ParamSet, states: &[StreamState]) -> f64 {
    states
        .iter()
        .flat_map(|s| mlp_forward(params, &s.features()).1)
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min)
}

/// Harmonic mean of the newest `window` non-zero samples.
pub fn harmonic_mean(history: &[f64], window: usize) -> Option<f64> {
    let xs: Vec<f64> = history
        .iter()
        .copied()
        .filter(|&x| x > 0.0)
        .take(window)
        .collect();
    if xs.is_empty() {
        None
    } else {
        Some(xs.len() as f64 / xs.iter().map(|x| 1.0 / x).sum::<f64>())
    }
}

/// Best plan value per first level, by recursive enumeration of every level
/// sequence of length `depth` under a constant download rate.
pub fn mpc_first_level_values(
    state: &StreamState,
    video: &VideoSpec,
    quality: &dyn Fn(usize) -> f64,
    rebuffer_penalty: f64,
    rate: f64,
    depth: usize,
) -> Vec<f64> {
    fn best(
        video: &VideoSpec,
        quality: &dyn Fn(usize) -> f64,
        mu: f64,
        rate: f64,
        chunk: usize,
        buffer: f64,
        prev: Option<usize>,
        left: usize,
    ) -> f64 {
        if left == 0 {
            return 0.0;
        }
        (0..video.num_levels())
            .map(|l| {
                let (gain, next_buffer) = step(video, quality, mu, rate, chunk, buffer, prev, l);
                gain + best(
                    video,
                    quality,
                    mu,
                    rate,
                    chunk + 1,
                    next_buffer,
                    Some(l),
                    left - 1,
                )
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
    fn step(
        video: &VideoSpec,
        quality: &dyn Fn(usize) -> f64,
        mu: f64,
        rate: f64,
        chunk: usize,
        buffer: f64,
        prev: Option<usize>,
        level: usize,
    ) -> (f64, f64) {
        let time = video.chunk_sizes()[level][chunk] / rate;
        let stall = if time > buffer { time - buffer } else { 0.0 };
        let drained = if buffer > time { buffer - time } else { 0.0 };
        let next = (drained + video.chunk_duration()).min(video.buffer_capacity());
        let switch = prev.map_or(0.0, |p| (quality(level) - quality(p)).abs());
        (quality(level) - mu * stall - switch, next)
    }
    let prev = (state.chunk_index > 0).then_some(state.last_level);
    (0..video.num_levels())
        .map(|l| {
            let (gain, next_buffer) = step(
                video,
                quality,
                rebuffer_penalty,
                rate,
                state.chunk_index,
                state.buffer,
                prev,
                l,
            );
            gain + best(
                video,
                quality,
                rebuffer_penalty,
                rate,
                state.chunk_index + 1,
                next_buffer,
                Some(l),
                depth - 1,
            )
        })
        .collect()
}
