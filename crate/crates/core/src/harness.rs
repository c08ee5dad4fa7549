//! Training and evaluation orchestration.
//!
//! Training follows an actor/learner split. Actors hold a snapshot of the
//! policy parameters and roll out whole episodes; the learner consumes
//! episodes one at a time, computes targets and gradients centrally, and
//! publishes a fresh snapshot every `sync_interval` updates. Episodes carry
//! the version of the parameters that generated them, so the lag between
//! behaviour and target policy is observable.
//!
//! Two execution strategies share that logic:
//!
//! * deterministic (default): actors run in rounds on the calling thread.
//!   Every actor rolls out one episode from the latest published snapshot,
//!   then the learner consumes the round in actor order. Later episodes of
//!   a round are therefore stale by the updates made from earlier ones.
//! * threaded: one OS thread per actor feeding a bounded queue; the
//!   learner consumes in arrival order. Not reproducible.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{
    bb_select, bola_params, harmonic_mean_throughput, mpc_select, rb_select, BaselineConfig,
    BolaParams, PredictionErrors,
};
use crate::neural::{policy_forward, Checkpoint, Optimizer, ParamSet, Sgd};
use crate::qoe::{QoeBreakdown, QoeConfig};
use crate::stream_env::{feature_len, StepOutcome, StreamEnv, StreamState, VideoSpec};
use crate::trace_store::{LossModel, NetworkTrace};
use crate::vtrace_agent::{
    actor_gradients, argmax, critic_gradients, critic_values, sample_index, target_action_probs,
    vanilla_advantages, vanilla_targets, vtrace_from_parts, Episode, Hyperparams, VTraceInputs,
};
use crate::{Error, Result};

/// Every ABR algorithm the toolkit can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Alisa,
    A3c,
    Bb,
    Rb,
    Bola,
    Mpc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Alisa,
        Algorithm::A3c,
        Algorithm::Bb,
        Algorithm::Rb,
        Algorithm::Bola,
        Algorithm::Mpc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Alisa => "alisa",
            Algorithm::A3c => "a3c",
            Algorithm::Bb => "bb",
            Algorithm::Rb => "rb",
            Algorithm::Bola => "bola",
            Algorithm::Mpc => "mpc",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Algorithm::Alisa | Algorithm::A3c)
    }

    pub fn train_mode(self) -> Option<TrainMode> {
        match self {
            Algorithm::Alisa => Some(TrainMode::Alisa),
            Algorithm::A3c => Some(TrainMode::Vanilla),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .or(match s.as_str() {
                "pensieve" | "vanilla" => Some(Algorithm::A3c),
                "robustmpc" => Some(Algorithm::Mpc),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm {s:?}")))
    }
}

/// Per-chunk decision maker driven by [`run_session`].
pub trait AbrController {
    /// Clears per-session state.
    fn reset(&mut self) {}
    fn select(&mut self, state: &StreamState) -> Result<usize>;
    /// Called with the result of the chunk chosen by the last `select`.
    fn observe(&mut self, _outcome: &StepOutcome) {}
}

/// Learned policy evaluated greedily.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    pub actor: ParamSet,
}

impl AbrController for GreedyPolicy {
    fn select(&mut self, state: &StreamState) -> Result<usize> {
        Ok(argmax(&policy_forward(&self.actor, &state.features())?))
    }
}

#[derive(Debug, Clone)]
pub struct BufferBased(pub BaselineConfig);

impl AbrController for BufferBased {
    fn select(&mut self, state: &StreamState) -> Result<usize> {
        Ok(bb_select(state, &self.0))
    }
}

#[derive(Debug, Clone)]
pub struct RateBased {
    pub cfg: BaselineConfig,
    pub bitrates_kbps: Vec<f64>,
}

impl AbrController for RateBased {
    fn select(&mut self, state: &StreamState) -> Result<usize> {
        Ok(rb_select(state, &self.cfg, &self.bitrates_kbps))
    }
}

#[derive(Debug, Clone)]
pub struct Bola {
    params: BolaParams,
    video: VideoSpec,
}

impl Bola {
    pub fn new(cfg: &BaselineConfig, video: &VideoSpec) -> Self {
        Self {
            params: bola_params(cfg, video),
            video: video.clone(),
        }
    }
}

impl AbrController for Bola {
    fn select(&mut self, state: &StreamState) -> Result<usize> {
        Ok(crate::baselines::bola_select_with(
            state,
            &self.params,
            &self.video,
        ))
    }
}

/// RobustMPC with its rolling prediction-error record.
#[derive(Debug, Clone)]
pub struct RobustMpc {
    cfg: BaselineConfig,
    video: VideoSpec,
    qoe: QoeConfig,
    errors: PredictionErrors,
    /// Harmonic-mean prediction made for the chunk in flight.
    pending: Option<f64>,
}

impl RobustMpc {
    pub fn new(cfg: &BaselineConfig, video: &VideoSpec, qoe: &QoeConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            video: video.clone(),
            qoe: qoe.clone(),
            errors: PredictionErrors::new(cfg.mpc_error_window),
            pending: None,
        }
    }
}

impl AbrController for RobustMpc {
    fn reset(&mut self) {
        self.errors.clear();
        self.pending = None;
    }

    fn select(&mut self, state: &StreamState) -> Result<usize> {
        self.pending = harmonic_mean_throughput(state, self.cfg.rb_window);
        Ok(mpc_select(
            state,
            &self.cfg,
            &self.video,
            &self.qoe,
            &self.errors.as_vec(),
        ))
    }

    fn observe(&mut self, outcome: &StepOutcome) {
        if let Some(predicted) = self.pending.take() {
            self.errors
                .record(predicted, outcome.next_state.throughput_history[0]);
        }
    }
}

/// Recipe for building a controller; cheap to share between threads.
#[derive(Debug, Clone)]
pub enum ControllerSpec {
    Learned(ParamSet),
    Baseline(Algorithm, BaselineConfig),
}

impl ControllerSpec {
    pub fn build(&self, video: &VideoSpec, qoe: &QoeConfig) -> Result<Box<dyn AbrController>> {
        Ok(match self {
            ControllerSpec::Learned(actor) => {
                if actor.input_len() != feature_len(video.num_levels())
                    || actor.output_len() != video.num_levels()
                {
                    return Err(Error::Dimension(format!(
                        "policy network {:?} does not match a {}-level ladder",
                        actor.layer_sizes(),
                        video.num_levels()
                    )));
                }
                Box::new(GreedyPolicy {
                    actor: actor.clone(),
                })
            }
            ControllerSpec::Baseline(algo, cfg) => {
                cfg.validate()?;
                match algo {
                    Algorithm::Bb => Box::new(BufferBased(cfg.clone())),
                    Algorithm::Rb => Box::new(RateBased {
                        cfg: cfg.clone(),
                        bitrates_kbps: video.bitrate_levels().to_vec(),
                    }),
                    Algorithm::Bola => Box::new(Bola::new(cfg, video)),
                    Algorithm::Mpc => Box::new(RobustMpc::new(cfg, video, qoe)),
                    learned => {
                        return Err(Error::InvalidArgument(format!(
                            "{learned} needs a checkpoint"
                        )))
                    }
                }
            }
        })
    }
}

/// Seed of the playback session for trace `index` under base seed `seed`.
pub fn session_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_add(1)
}

/// Plays one whole video over `trace` with `controller`.
pub fn run_session(
    controller: &mut dyn AbrController,
    trace: &NetworkTrace,
    video: &VideoSpec,
    qoe: &QoeConfig,
    loss: LossModel,
    seed: u64,
) -> Result<(QoeBreakdown, Vec<StepOutcome>)> {
    controller.reset();
    let mut env = StreamEnv::reset(trace, video, loss, seed)?;
    let mut outcomes = Vec::with_capacity(video.num_chunks());
    while !env.is_done() {
        let action = controller.select(env.state())?;
        let outcome = env.step(action)?;
        controller.observe(&outcome);
        outcomes.push(outcome);
    }
    Ok((qoe.episode_qoe(&outcomes)?, outcomes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceQoe {
    pub trace_id: String,
    pub breakdown: QoeBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("summary of no values".into()));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        Ok(Self {
            count: values.len(),
            mean,
            median,
        })
    }
}

/// Per-trace results of one controller on one trace set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub label: String,
    pub per_trace: Vec<TraceQoe>,
    pub summary: Summary,
}

impl EvalResult {
    pub fn from_traces(label: impl Into<String>, per_trace: Vec<TraceQoe>) -> Result<Self> {
        let totals: Vec<f64> = per_trace.iter().map(|t| t.breakdown.total).collect();
        Ok(Self {
            label: label.into(),
            summary: Summary::of(&totals)?,
            per_trace,
        })
    }

    pub fn totals(&self) -> Vec<f64> {
        self.per_trace.iter().map(|t| t.breakdown.total).collect()
    }
}

/// Evaluation settings shared by every trace of a sweep.
#[derive(Debug, Clone)]
pub struct EvalSettings<'a> {
    pub video: &'a VideoSpec,
    pub qoe: &'a QoeConfig,
    pub loss: LossModel,
    pub seed: u64,
    pub threads: usize,
}

/// Runs `spec` on every trace (greedy for learned policies). The result is
/// independent of `threads`.
pub fn evaluate(
    label: impl Into<String>,
    spec: &ControllerSpec,
    traces: &[NetworkTrace],
    settings: &EvalSettings<'_>,
) -> Result<EvalResult> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no traces to evaluate".into()));
    }
    let threads = settings.threads.clamp(1, traces.len());
    let per_chunk = traces.len().div_ceil(threads);
    let run_chunk = |offset: usize, chunk: &[NetworkTrace]| -> Result<Vec<TraceQoe>> {
        let mut controller = spec.build(settings.video, settings.qoe)?;
        chunk
            .iter()
            .enumerate()
            .map(|(i, trace)| {
                let (breakdown, _) = run_session(
                    controller.as_mut(),
                    trace,
                    settings.video,
                    settings.qoe,
                    settings.loss,
                    session_seed(settings.seed, offset + i),
                )?;
                Ok(TraceQoe {
                    trace_id: trace.id().to_string(),
                    breakdown,
                })
            })
            .collect()
    };
    let per_trace = if threads == 1 {
        run_chunk(0, traces)?
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = traces
                .chunks(per_chunk)
                .enumerate()
                .map(|(c, chunk)| {
                    let run_chunk = &run_chunk;
                    scope.spawn(move || run_chunk(c * per_chunk, chunk))
                })
                .collect();
            let mut all = Vec::with_capacity(traces.len());
            for handle in handles {
                all.extend(handle.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, Error>(all)
        })?
    };
    EvalResult::from_traces(label, per_trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// V-trace targets with truncated importance weights.
    Alisa,
    /// One-step TD advantages, no importance weighting.
    Vanilla,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Alisa => "alisa",
            TrainMode::Vanilla => "a3c",
        }
    }
}

/// Everything a training run depends on.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hp: Hyperparams,
    /// Hidden layer widths shared by actor and critic.
    pub hidden: Vec<usize>,
    pub train_traces: Vec<NetworkTrace>,
    pub val_traces: Vec<NetworkTrace>,
    pub qoe: QoeConfig,
    pub video: VideoSpec,
    pub loss: LossModel,
    pub seed: u64,
    /// Seed of the validation sessions, identical across runs so validation
    /// scores are comparable.
    pub eval_seed: u64,
    pub val_interval: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Run actors on OS threads (non-deterministic).
    pub threaded: bool,
    /// Treat every episode as on-policy (`ρ_t = c_t = 1`).
    pub force_unit_weights: bool,
}

impl TrainConfig {
    pub fn new(train_traces: Vec<NetworkTrace>, val_traces: Vec<NetworkTrace>) -> Self {
        let video = VideoSpec::default();
        let qoe = QoeConfig::new(crate::qoe::QoeVariant::Linear, video.bitrate_levels())
            .expect("default ladder");
        Self {
            hp: Hyperparams::default(),
            hidden: vec![128],
            train_traces,
            val_traces,
            qoe,
            video,
            loss: LossModel::lossless(),
            seed: 0,
            eval_seed: 0,
            val_interval: 100,
            checkpoint_dir: None,
            threaded: false,
            force_unit_weights: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.train_traces.is_empty() {
            return Err(Error::InvalidArgument("no training traces".into()));
        }
        if self.val_traces.is_empty() {
            return Err(Error::InvalidArgument("no validation traces".into()));
        }
        if self.val_interval == 0 {
            return Err(Error::InvalidArgument(
                "val_interval must be positive".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "hidden widths must be positive".into(),
            ));
        }
        for v in &self.val_traces {
            if self.train_traces.iter().any(|t| t.id() == v.id() || t == v) {
                return Err(Error::InvalidArgument(format!(
                    "trace {} is in both the training and validation sets",
                    v.id()
                )));
            }
        }
        if self.qoe.num_levels() != self.video.num_levels() {
            return Err(Error::InvalidArgument(
                "QoE config and video ladder disagree on the number of levels".into(),
            ));
        }
        Ok(())
    }

    fn actor_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![feature_len(self.video.num_levels())];
        sizes.extend(&self.hidden);
        sizes.push(self.video.num_levels());
        sizes
    }

    fn critic_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![feature_len(self.video.num_levels())];
        sizes.extend(&self.hidden);
        sizes.push(1);
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Total reward of the episode consumed at this epoch.
    pub episode_reward: f64,
    pub max_reward_so_far: f64,
    pub beta: f64,
    /// Learner updates between the behaviour snapshot and this update.
    pub policy_lag: u64,
    pub actor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRecord {
    /// Number of learner updates completed when validating.
    pub epoch: usize,
    pub mean_qoe: f64,
    pub best_so_far: f64,
}

/// Deterministic training log (wall-clock figures live in [`TrainTimings`]).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub epochs: Vec<EpochRecord>,
    pub validations: Vec<ValidationRecord>,
    /// `"init"` or `"epoch-<n>"`.
    pub best_checkpoint: String,
    pub best_validation_qoe: Option<f64>,
}

impl TrainReport {
    /// First validation epoch whose score reached `threshold`.
    pub fn epochs_to_reach(&self, threshold: f64) -> Option<usize> {
        self.validations
            .iter()
            .find(|v| v.mean_qoe >= threshold)
            .map(|v| v.epoch)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTimings {
    pub epoch_seconds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub timings: TrainTimings,
    /// Parameters with the best validation score.
    pub best: Checkpoint,
    /// Parameters after the last update.
    pub last: Checkpoint,
}

/// Parameters published by the learner.
#[derive(Debug, Clone)]
struct Snapshot {
    theta: ParamSet,
    version: u64,
}

struct Actor {
    id: usize,
    rng: ChaCha8Rng,
}

impl Actor {
    fn new(seed: u64, id: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64 + 1);
        Self { id, rng }
    }

    fn rollout(&mut self, snapshot: &Snapshot, cfg: &TrainConfig) -> Result<Episode> {
        let trace = &cfg.train_traces[self.rng.random_range(0..cfg.train_traces.len())];
        let mut env = StreamEnv::reset(trace, &cfg.video, cfg.loss, self.rng.random())?;
        let n = cfg.video.num_chunks();
        let mut states = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        let mut behaviour_probs = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut prev = None;
        while !env.is_done() {
            let state = env.state().clone();
            let probs = policy_forward(&snapshot.theta, &state.features())?;
            let action = sample_index(&probs, &mut self.rng);
            let outcome = env.step(action)?;
            rewards.push(cfg.qoe.step_reward(prev, action, outcome.rebuffer_time)?);
            prev = Some(action);
            states.push(state);
            actions.push(action);
            behaviour_probs.push(probs);
        }
        Ok(Episode {
            states,
            actions,
            behaviour_probs,
            rewards,
            bootstrap_state: env.state().clone(),
            terminal: true,
            policy_version: snapshot.version,
            actor: self.id,
        })
    }
}

struct Learner {
    theta: ParamSet,
    w: ParamSet,
    updates: u64,
    optimizer: Sgd,
}

impl Learner {
    fn update(
        &mut self,
        episode: &Episode,
        beta: f64,
        mode: TrainMode,
        cfg: &TrainConfig,
    ) -> Result<()> {
        episode.validate()?;
        let hp = &cfg.hp;
        let (advantages, targets) = match mode {
            TrainMode::Alisa => {
                let (values, bootstrap_value) = critic_values(episode, &self.w)?;
                let behaviour = episode.behaviour_action_probs();
                let target = if cfg.force_unit_weights {
                    behaviour.clone()
                } else {
                    target_action_probs(episode, &self.theta)?
                };
                let vt = vtrace_from_parts(VTraceInputs {
                    rewards: &episode.rewards,
                    values: &values,
                    bootstrap_value,
                    target_action_probs: &target,
                    behaviour_action_probs: &behaviour,
                    gamma: hp.gamma,
                    rho_bar: hp.rho_bar,
                    c_bar: hp.c_bar,
                })?;
                (vt.pg_advantages, vt.targets)
            }
            TrainMode::Vanilla => (
                vanilla_advantages(episode, &self.w, hp.gamma)?,
                vanilla_targets(episode, &self.w, hp.gamma)?,
            ),
        };
        let actor_grads = actor_gradients(episode, &advantages, &self.theta, beta)?;
        let critic_grads = critic_gradients(episode, &targets, &self.w)?;
        self.optimizer
            .step(&mut self.theta, &actor_grads, hp.actor_lr)?;
        self.optimizer
            .step(&mut self.w, &critic_grads, -hp.critic_lr)?;
        if !self.theta.is_finite() || !self.w.is_finite() {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        self.updates += 1;
        Ok(())
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            theta: self.theta.clone(),
            version: self.updates,
        }
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            actor: self.theta.clone(),
            critic: self.w.clone(),
        }
    }
}

/// Learner-side bookkeeping shared by both execution strategies.
struct Run<'a, F> {
    cfg: &'a TrainConfig,
    mode: TrainMode,
    learner: Learner,
    report: TrainReport,
    timings: TrainTimings,
    best: Checkpoint,
    max_reward: f64,
    observer: F,
}

impl<F: FnMut(usize, &ParamSet, &ParamSet)> Run<'_, F> {
    fn consume(&mut self, episode: Episode) -> Result<()> {
        let started = Instant::now();
        let epoch = self.learner.updates as usize;
        let beta = self.cfg.hp.entropy.beta_at(epoch, self.cfg.hp.epochs);
        let lag = self.learner.updates - episode.policy_version;
        self.learner
            .update(&episode, beta, self.mode, self.cfg)
            .map_err(|e| Error::Training {
                epoch,
                source: Box::new(e),
            })?;
        (self.observer)(epoch, &self.learner.theta, &self.learner.w);

        let reward = episode.total_reward();
        self.max_reward = self.max_reward.max(reward);
        self.report.epochs.push(EpochRecord {
            epoch,
            episode_reward: reward,
            max_reward_so_far: self.max_reward,
            beta,
            policy_lag: lag,
            actor: episode.actor,
        });

        let done = self.learner.updates as usize;
        if done.is_multiple_of(self.cfg.val_interval) || done == self.cfg.hp.epochs {
            self.validate(done).map_err(|e| Error::Training {
                epoch,
                source: Box::new(e),
            })?;
        }
        self.timings
            .epoch_seconds
            .push(started.elapsed().as_secs_f64());
        Ok(())
    }

    fn validate(&mut self, done: usize) -> Result<()> {
        let spec = ControllerSpec::Learned(self.learner.theta.clone());
        let settings = EvalSettings {
            video: &self.cfg.video,
            qoe: &self.cfg.qoe,
            loss: self.cfg.loss,
            seed: self.cfg.eval_seed,
            threads: 1,
        };
        let result = evaluate("validation", &spec, &self.cfg.val_traces, &settings)?;
        let score = result.summary.mean;
        let improved = self
            .report
            .best_validation_qoe
            .is_none_or(|best| score > best);
        if improved {
            self.report.best_validation_qoe = Some(score);
            self.report.best_checkpoint = format!("epoch-{done}");
            self.best = self.learner.checkpoint();
        }
        let best_so_far = self.report.best_validation_qoe.unwrap_or(score);
        info!(
            "[{}] epoch {done}: validation QoE {score:.3} (best {best_so_far:.3})",
            self.mode.as_str()
        );
        self.report.validations.push(ValidationRecord {
            epoch: done,
            mean_qoe: score,
            best_so_far,
        });
        Ok(())
    }
}

/// Trains a policy. See [`train_observed`].
pub fn train(cfg: &TrainConfig, mode: TrainMode) -> Result<TrainOutcome> {
    train_observed(cfg, mode, |_, _, _| {})
}

/// Trains for `cfg.hp.epochs` learner updates, calling `observer` with the
/// actor and critic parameters after every update.
///
/// Validation runs every `val_interval` updates and after the last one; the
/// best-scoring parameters are returned (and written to
/// `<checkpoint_dir>/best.ckpt` alongside `final.ckpt` when a directory is
/// configured).
pub fn train_observed<F>(cfg: &TrainConfig, mode: TrainMode, observer: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &ParamSet, &ParamSet),
{
    cfg.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // zero output layers: uniform initial policy, zero initial value
    let mut theta = ParamSet::glorot(&cfg.actor_sizes(), &mut init_rng)?;
    theta.zero_output_layer();
    let mut w = ParamSet::glorot(&cfg.critic_sizes(), &mut init_rng)?;
    w.zero_output_layer();
    let learner = Learner {
        theta,
        w,
        updates: 0,
        optimizer: Sgd,
    };
    let initial = learner.checkpoint();
    let mut run = Run {
        cfg,
        mode,
        learner,
        report: TrainReport {
            mode,
            epochs: Vec::with_capacity(cfg.hp.epochs),
            validations: Vec::new(),
            best_checkpoint: "init".into(),
            best_validation_qoe: None,
        },
        timings: TrainTimings::default(),
        best: initial,
        max_reward: f64::NEG_INFINITY,
        observer,
    };
    info!(
        "training {} for {} epochs with {} actor(s), sync every {} update(s)",
        mode.as_str(),
        cfg.hp.epochs,
        cfg.hp.actors,
        cfg.hp.sync_interval
    );

    if cfg.threaded && cfg.hp.actors > 1 {
        run_threaded(&mut run)?;
    } else {
        run_rounds(&mut run)?;
    }

    let outcome = TrainOutcome {
        last: run.learner.checkpoint(),
        best: run.best,
        report: run.report,
        timings: run.timings,
    };
    if let Some(dir) = &cfg.checkpoint_dir {
        outcome.best.save(dir.join("best.ckpt"))?;
        outcome.last.save(dir.join("final.ckpt"))?;
    }
    Ok(outcome)
}

fn run_rounds<F: FnMut(usize, &ParamSet, &ParamSet)>(run: &mut Run<'_, F>) -> Result<()> {
    let cfg = run.cfg;
    let mut actors: Vec<Actor> = (0..cfg.hp.actors)
        .map(|id| Actor::new(cfg.seed, id))
        .collect();
    let mut published = run.learner.snapshot();
    while (run.learner.updates as usize) < cfg.hp.epochs {
        let epoch = run.learner.updates as usize;
        let round = actors
            .iter_mut()
            .map(|actor| actor.rollout(&published, cfg))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Training {
                epoch,
                source: Box::new(e),
            })?;
        for episode in round {
            if run.learner.updates as usize >= cfg.hp.epochs {
                break;
            }
            run.consume(episode)?;
            if run
                .learner
                .updates
                .is_multiple_of(cfg.hp.sync_interval as u64)
            {
                published = run.learner.snapshot();
            }
        }
    }
    Ok(())
}

fn run_threaded<F: FnMut(usize, &ParamSet, &ParamSet)>(run: &mut Run<'_, F>) -> Result<()> {
    let cfg = run.cfg;
    let published = RwLock::new(Arc::new(run.learner.snapshot()));
    let stop = AtomicBool::new(false);
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel::<Result<Episode>>(cfg.hp.actors);
        for id in 0..cfg.hp.actors {
            let tx = tx.clone();
            let published = &published;
            let stop = &stop;
            scope.spawn(move || {
                let mut actor = Actor::new(cfg.seed, id);
                while !stop.load(Ordering::Relaxed) {
                    let snapshot = Arc::clone(&published.read().expect("snapshot lock"));
                    let episode = actor.rollout(&snapshot, cfg);
                    let failed = episode.is_err();
                    if tx.send(episode).is_err() || failed {
                        break;
                    }
                }
            });
        }
        drop(tx);

        let result = (|| {
            while (run.learner.updates as usize) < cfg.hp.epochs {
                let epoch = run.learner.updates as usize;
                let episode = rx
                    .recv()
                    .map_err(|_| Error::InvalidArgument("all actors stopped".into()))?
                    .map_err(|e| Error::Training {
                        epoch,
                        source: Box::new(e),
                    })?;
                run.consume(episode)?;
                if run
                    .learner
                    .updates
                    .is_multiple_of(cfg.hp.sync_interval as u64)
                {
                    *published.write().expect("snapshot lock") = Arc::new(run.learner.snapshot());
                }
            }
            Ok(())
        })();
        stop.store(true, Ordering::Relaxed);
        // unblock actors waiting on a full queue
        drop(rx);
        result
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_arithmetic() {
        let s = Summary::of(&[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(s.mean, 20.0);
        assert_eq!(s.median, 20.0);
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert!(Summary::of(&[]).is_err());
    }

    #[test]
    fn algorithm_names() {
        for algo in Algorithm::ALL {
            assert_eq!(algo.as_str().parse::<Algorithm>().unwrap(), algo);
        }
        assert_eq!("pensieve".parse::<Algorithm>().unwrap(), Algorithm::A3c);
        assert!("festive".parse::<Algorithm>().is_err());
    }

    #[test]
    fn learned_spec_rejects_wrong_shape() {
        let video = VideoSpec::default();
        let qoe = QoeConfig::linear();
        let actor = ParamSet::zeros(&[10, 4, 6]).unwrap();
        assert!(ControllerSpec::Learned(actor).build(&video, &qoe).is_err());
        let spec = ControllerSpec::Baseline(Algorithm::Alisa, BaselineConfig::default());
        assert!(spec.build(&video, &qoe).is_err());
    }
}
