//! Fixed-rule ABR controllers: buffer-based (BB), rate-based (RB), BOLA and
//! RobustMPC. All selectors are pure functions of their arguments; the only
//! state RobustMPC needs (its past prediction errors) is passed in.

use std::collections::VecDeque;

use crate::qoe::QoeConfig;
use crate::stream_env::{StreamState, VideoSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// BB: buffer level (s) at or below which the lowest level is chosen.
    pub bb_reservoir: f64,
    /// BB: buffer span (s) over which the choice ramps to the top level.
    pub bb_cushion: f64,
    /// RB/MPC: number of recent throughput samples in the harmonic mean.
    pub rb_window: usize,
    /// BOLA: fraction in (0, 1) of the largest admissible utility weight.
    pub bola_utility_weight: f64,
    /// BOLA: multiplier (≥ 1) on the smallest startup offset that keeps the
    /// lowest level optimal on an empty buffer.
    pub bola_startup: f64,
    /// MPC: look-ahead in chunks.
    pub mpc_horizon: usize,
    /// MPC: number of past relative prediction errors considered.
    pub mpc_error_window: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            bb_reservoir: 5.0,
            bb_cushion: 10.0,
            rb_window: 5,
            bola_utility_weight: 0.95,
            bola_startup: 1.1,
            mpc_horizon: 5,
            mpc_error_window: 5,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bb_reservoir", self.bb_reservoir),
            ("bb_cushion", self.bb_cushion),
            ("bola_utility_weight", self.bola_utility_weight),
            ("bola_startup", self.bola_startup),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.bola_utility_weight >= 1.0 {
            return Err(Error::InvalidArgument(
                "bola_utility_weight must be below 1".into(),
            ));
        }
        if self.bola_startup < 1.0 {
            return Err(Error::InvalidArgument(
                "bola_startup must be at least 1".into(),
            ));
        }
        if self.rb_window == 0 || self.mpc_horizon == 0 || self.mpc_error_window == 0 {
            return Err(Error::InvalidArgument(
                "rb_window, mpc_horizon and mpc_error_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Buffer-based: linear map from buffer level to ladder position.
pub fn bb_select(state: &StreamState, cfg: &BaselineConfig) -> usize {
    let levels = state.num_levels();
    let top = levels - 1;
    if state.buffer <= cfg.bb_reservoir {
        0
    } else if state.buffer >= cfg.bb_reservoir + cfg.bb_cushion {
        top
    } else {
        let fraction = (state.buffer - cfg.bb_reservoir) / cfg.bb_cushion;
        ((fraction * top as f64).floor() as usize).min(top)
    }
}

/// Harmonic mean of up to `window` most recent non-zero throughput samples.
pub fn harmonic_mean_throughput(state: &StreamState, window: usize) -> Option<f64> {
    let samples: Vec<f64> = state
        .throughput_history
        .iter()
        .copied()
        .filter(|&x| x > 0.0)
        .take(window)
        .collect();
    if samples.is_empty() {
        return None;
    }
    Some(samples.len() as f64 / samples.iter().map(|x| 1.0 / x).sum::<f64>())
}

/// Highest level whose bitrate does not exceed `mbps`, else 0.
pub fn highest_level_below(bitrates_kbps: &[f64], mbps: f64) -> usize {
    bitrates_kbps
        .iter()
        .rposition(|&kbps| kbps / 1000.0 <= mbps)
        .unwrap_or(0)
}

/// Rate-based: highest sustainable level under the harmonic-mean estimate.
pub fn rb_select(state: &StreamState, cfg: &BaselineConfig, bitrates_kbps: &[f64]) -> usize {
    match harmonic_mean_throughput(state, cfg.rb_window) {
        Some(mbps) => highest_level_below(bitrates_kbps, mbps),
        None => 0,
    }
}

/// Control parameters of BOLA's objective
/// `(V (u_m + g) − Q) / S_m`, with `Q` the buffer in chunks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BolaParams {
    pub v: f64,
    pub gp: f64,
}

/// Calibrates `(V, g)` from two boundary conditions on the nominal chunk
/// sizes `S_m` and utilities `u_m = ln(S_m / S_0)`:
///
/// * Empty buffer selects level 0. At `Q = 0` the objective is
///   `V (u_m + g) / S_m`, and level 0 beats level m iff
///   `g ≥ u_m S_0 / (S_m − S_0)`. `g` is the largest such bound times
///   `bola_startup`.
/// * Full buffer selects the top level. At `Q = Q_max` the top level beats
///   level m iff `V D_m + Q_max (1/S_m − 1/S_top) ≥ 0` where
///   `D_m = (u_top + g)/S_top − (u_m + g)/S_m`. For `D_m < 0` this bounds
///   `V` from above; `V` is `bola_utility_weight` times the tightest bound.
///
/// Every objective is linear in `Q` with slope `−1/S_m`, so the argmax only
/// moves up the ladder as the buffer grows.
pub fn bola_params(cfg: &BaselineConfig, video: &VideoSpec) -> BolaParams {
    let levels = video.num_levels();
    let sizes: Vec<f64> = (0..levels).map(|m| video.nominal_size(m)).collect();
    let utils: Vec<f64> = sizes.iter().map(|s| (s / sizes[0]).ln()).collect();
    let g_min = (1..levels)
        .map(|m| utils[m] * sizes[0] / (sizes[m] - sizes[0]))
        .fold(0.0, f64::max);
    let gp = cfg.bola_startup * g_min;

    let q_max = video.buffer_capacity() / video.chunk_duration();
    let top = levels - 1;
    let mut v_max = f64::INFINITY;
    for m in 0..top {
        let d = (utils[top] + gp) / sizes[top] - (utils[m] + gp) / sizes[m];
        if d < 0.0 {
            let bound = q_max * (1.0 / sizes[m] - 1.0 / sizes[top]) / -d;
            v_max = v_max.min(bound);
        }
    }
    if !v_max.is_finite() {
        v_max = q_max;
    }
    BolaParams {
        v: cfg.bola_utility_weight * v_max,
        gp,
    }
}

pub fn bola_select(state: &StreamState, cfg: &BaselineConfig, video: &VideoSpec) -> usize {
    bola_select_with(state, &bola_params(cfg, video), video)
}

pub fn bola_select_with(state: &StreamState, params: &BolaParams, video: &VideoSpec) -> usize {
    let q = state.buffer / video.chunk_duration();
    let s0 = video.nominal_size(0);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for m in 0..video.num_levels() {
        let s = video.nominal_size(m);
        let score = (params.v * ((s / s0).ln() + params.gp) - q) / s;
        if score > best_score {
            best = m;
            best_score = score;
        }
    }
    best
}

/// Throughput estimate used by RobustMPC: the harmonic mean discounted by
/// the largest recent relative prediction error.
pub fn mpc_estimate(state: &StreamState, cfg: &BaselineConfig, past_errors: &[f64]) -> Option<f64> {
    let hm = harmonic_mean_throughput(state, cfg.rb_window)?;
    let max_err = past_errors
        .iter()
        .rev()
        .take(cfg.mpc_error_window)
        .copied()
        .fold(0.0, f64::max);
    Some(hm / (1.0 + max_err))
}

/// QoE of playing `levels` over the next chunks when every download runs at
/// `estimate` Mbps, starting from `state`.
pub fn mpc_plan_value(
    state: &StreamState,
    levels: &[usize],
    estimate: f64,
    video: &VideoSpec,
    qoe: &QoeConfig,
) -> f64 {
    let mut buffer = state.buffer;
    let mut prev = state.has_previous().then_some(state.last_level);
    let mut total = 0.0;
    for (k, &level) in levels.iter().enumerate() {
        let download = video.chunk_size(level, state.chunk_index + k) / estimate;
        let rebuffer = (download - buffer).max(0.0);
        buffer =
            ((buffer - download).max(0.0) + video.chunk_duration()).min(video.buffer_capacity());
        let q = qoe.quality(level);
        let smooth = prev.map_or(0.0, |p| (q - qoe.quality(p)).abs());
        total += q - qoe.rebuffer_penalty() * rebuffer - smooth;
        prev = Some(level);
    }
    total
}

/// RobustMPC: exhaustive search over every level sequence of the (clipped)
/// horizon, returning the first level of the best plan. `past_errors` are
/// relative throughput prediction errors, oldest first.
pub fn mpc_select(
    state: &StreamState,
    cfg: &BaselineConfig,
    video: &VideoSpec,
    qoe: &QoeConfig,
    past_errors: &[f64],
) -> usize {
    let Some(estimate) = mpc_estimate(state, cfg, past_errors) else {
        return 0;
    };
    let remaining = video.num_chunks().saturating_sub(state.chunk_index);
    let horizon = cfg.mpc_horizon.min(remaining);
    if horizon == 0 {
        return 0;
    }
    let levels = video.num_levels();
    let mut plan = vec![0usize; horizon];
    let mut best_value = f64::NEG_INFINITY;
    let mut best_first = 0;
    // odometer over levels^horizon in lexicographic order; strict improvement
    // keeps the lowest first level among ties
    loop {
        let value = mpc_plan_value(state, &plan, estimate, video, qoe);
        if value > best_value {
            best_value = value;
            best_first = plan[0];
        }
        let mut pos = horizon;
        loop {
            if pos == 0 {
                return best_first;
            }
            pos -= 1;
            plan[pos] += 1;
            if plan[pos] < levels {
                break;
            }
            plan[pos] = 0;
        }
    }
}

/// Rolling record of RobustMPC's relative prediction errors.
#[derive(Debug, Clone, Default)]
pub struct PredictionErrors {
    errors: VecDeque<f64>,
    capacity: usize,
}

impl PredictionErrors {
    pub fn new(capacity: usize) -> Self {
        Self {
            errors: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    pub fn record(&mut self, predicted: f64, observed: f64) {
        if observed <= 0.0 {
            return;
        }
        if self.errors.len() == self.capacity {
            self.errors.pop_front();
        }
        self.errors
            .push_back((predicted - observed).abs() / observed);
    }

    pub fn as_vec(&self) -> Vec<f64> {
        self.errors.iter().copied().collect()
    }

    pub fn clear(&mut self) {
        self.errors.clear();
    }
}
