//! Sectioned `key = value` configuration.
//!
//! ```text
//! # comment
//! [train]
//! epochs = 5000
//! entropy = 1,0.75,0.5,0.25,0.1
//! [qoe]
//! variant = log
//! ```
//!
//! Every key has a default. Later assignments win, so callers layer
//! defaults, a file and then `section.key=value` overrides.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::BaselineConfig;
use crate::harness::TrainConfig;
use crate::qoe::{QoeConfig, QoeVariant};
use crate::stream_env::{
    VideoSpec, DEFAULT_BITRATES_KBPS, DEFAULT_BUFFER_CAPACITY, DEFAULT_CHUNK_DURATION,
    DEFAULT_NUM_CHUNKS,
};
use crate::trace_store::{
    generate_synthetic, load_trace_dir, LossModel, NetworkTrace, SyntheticTraceSpec,
};
use crate::vtrace_agent::{EntropySchedule, Hyperparams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSettings {
    pub bitrates_kbps: Vec<f64>,
    pub chunk_duration: f64,
    pub num_chunks: usize,
    pub buffer_capacity: f64,
    /// Seed of the per-chunk size jitter.
    pub seed: u64,
}

impl Default for VideoSettings {
    fn default() -> Self {
        Self {
            bitrates_kbps: DEFAULT_BITRATES_KBPS.to_vec(),
            chunk_duration: DEFAULT_CHUNK_DURATION,
            num_chunks: DEFAULT_NUM_CHUNKS,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub hp: Hyperparams,
    pub hidden: Vec<usize>,
    pub val_interval: usize,
    pub seed: u64,
    pub eval_seed: u64,
    pub threaded: bool,
}

impl Default for TrainSettings {
    /// Desk-scale profile: 5000 epochs, 2 actors, publish every 4 updates.
    fn default() -> Self {
        Self {
            hp: Hyperparams {
                epochs: 5000,
                actors: 2,
                sync_interval: 4,
                ..Hyperparams::default()
            },
            hidden: vec![128],
            val_interval: 100,
            seed: 0,
            eval_seed: 0,
            threaded: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QoeSettings {
    pub variant: QoeVariant,
    pub rebuffer_penalty: Option<f64>,
    pub hd_table: Option<Vec<f64>>,
}

impl Default for QoeSettings {
    fn default() -> Self {
        Self {
            variant: QoeVariant::Linear,
            rebuffer_penalty: None,
            hd_table: None,
        }
    }
}

/// Where the train, validation and test trace sets come from. A directory
/// overrides the synthetic generator for that set.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSettings {
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub duration: f64,
    pub mean_bandwidth: f64,
    pub volatility: f64,
    pub seed: u64,
}

impl Default for TraceSettings {
    fn default() -> Self {
        let synth = SyntheticTraceSpec::default();
        Self {
            train_dir: None,
            val_dir: None,
            test_dir: None,
            train_count: 20,
            val_count: 5,
            test_count: 10,
            duration: synth.duration,
            mean_bandwidth: synth.mean_bandwidth,
            volatility: synth.volatility,
            seed: synth.seed,
        }
    }
}

/// The three disjoint trace sets of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSets {
    pub train: Vec<NetworkTrace>,
    pub val: Vec<NetworkTrace>,
    pub test: Vec<NetworkTrace>,
}

impl TraceSettings {
    pub fn synthetic_spec(&self, num_traces: usize) -> SyntheticTraceSpec {
        SyntheticTraceSpec {
            num_traces,
            duration: self.duration,
            mean_bandwidth: self.mean_bandwidth,
            volatility: self.volatility,
            seed: self.seed,
        }
    }

    /// Loads the configured directories; sets without a directory are cut
    /// from one synthetic batch in train, val, test order.
    pub fn load(&self) -> Result<TraceSets> {
        let total = self.train_count + self.val_count + self.test_count;
        let mut synthetic = generate_synthetic(&self.synthetic_spec(total))?.into_iter();
        let mut take = |dir: &Option<PathBuf>, count: usize| -> Result<Vec<NetworkTrace>> {
            let generated: Vec<_> = synthetic.by_ref().take(count).collect();
            match dir {
                Some(dir) => load_trace_dir(dir),
                None => Ok(generated),
            }
        };
        Ok(TraceSets {
            train: take(&self.train_dir, self.train_count)?,
            val: take(&self.val_dir, self.val_count)?,
            test: take(&self.test_dir, self.test_count)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettingsConfig {
    pub loss: Vec<f64>,
    pub threads: usize,
    pub seed: u64,
}

impl Default for EvalSettingsConfig {
    fn default() -> Self {
        Self {
            loss: vec![0.0],
            threads: 1,
            seed: 0,
        }
    }
}

impl EvalSettingsConfig {
    pub fn loss_models(&self) -> Result<Vec<LossModel>> {
        self.loss.iter().map(|&p| LossModel::new(p)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub video: VideoSettings,
    pub train: TrainSettings,
    pub qoe: QoeSettings,
    pub baselines: BaselineConfig,
    pub traces: TraceSettings,
    pub eval: EvalSettingsConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for {key}"))),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl Settings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut settings = Self::default();
        settings.merge_file(path)?;
        Ok(settings)
    }

    pub fn merge_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_text(&text, &path.display().to_string())
    }

    pub fn merge_text(&mut self, text: &str, source: &str) -> Result<()> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at_line = |e: Error| Error::Parse {
                path: source.into(),
                line: i + 1,
                msg: e.to_string(),
            };
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    at_line(Error::Config(format!("malformed section header {line:?}")))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                at_line(Error::Config(format!("expected key = value, got {line:?}")))
            })?;
            self.set(&section, key.trim(), value.trim())
                .map_err(at_line)?;
        }
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key {path:?} is not section.key")))?;
        self.set(section, key, value.trim())
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let full = format!("{section}.{key}");
        let k = full.as_str();
        match (section, key) {
            ("video", "bitrates_kbps") => self.video.bitrates_kbps = parse_list(k, value)?,
            ("video", "chunk_duration") => self.video.chunk_duration = parse(k, value)?,
            ("video", "num_chunks") => self.video.num_chunks = parse(k, value)?,
            ("video", "buffer_capacity") => self.video.buffer_capacity = parse(k, value)?,
            ("video", "seed") => self.video.seed = parse(k, value)?,

            ("train", "gamma") => self.train.hp.gamma = parse(k, value)?,
            ("train", "actor_lr") => self.train.hp.actor_lr = parse(k, value)?,
            ("train", "critic_lr") => self.train.hp.critic_lr = parse(k, value)?,
            ("train", "entropy") => {
                self.train.hp.entropy = value
                    .parse::<EntropySchedule>()
                    .map_err(|e| Error::Config(format!("{k}: {e}")))?
            }
            ("train", "rho_bar") => self.train.hp.rho_bar = parse(k, value)?,
            ("train", "c_bar") => self.train.hp.c_bar = parse(k, value)?,
            ("train", "epochs") => self.train.hp.epochs = parse(k, value)?,
            ("train", "actors") => self.train.hp.actors = parse(k, value)?,
            ("train", "sync_interval") => self.train.hp.sync_interval = parse(k, value)?,
            ("train", "hidden") => self.train.hidden = parse_list(k, value)?,
            ("train", "val_interval") => self.train.val_interval = parse(k, value)?,
            ("train", "seed") => self.train.seed = parse(k, value)?,
            ("train", "eval_seed") => self.train.eval_seed = parse(k, value)?,
            ("train", "threaded") => self.train.threaded = parse_bool(k, value)?,

            ("qoe", "variant") => self.qoe.variant = parse(k, value)?,
            ("qoe", "rebuffer_penalty") => self.qoe.rebuffer_penalty = Some(parse(k, value)?),
            ("qoe", "hd_table") => self.qoe.hd_table = Some(parse_list(k, value)?),

            ("baselines", "bb_reservoir") => self.baselines.bb_reservoir = parse(k, value)?,
            ("baselines", "bb_cushion") => self.baselines.bb_cushion = parse(k, value)?,
            ("baselines", "rb_window") => self.baselines.rb_window = parse(k, value)?,
            ("baselines", "bola_utility_weight") => {
                self.baselines.bola_utility_weight = parse(k, value)?
            }
            ("baselines", "bola_startup") => self.baselines.bola_startup = parse(k, value)?,
            ("baselines", "mpc_horizon") => self.baselines.mpc_horizon = parse(k, value)?,
            ("baselines", "mpc_error_window") => self.baselines.mpc_error_window = parse(k, value)?,

            ("traces", "train_dir") => self.traces.train_dir = parse_path(value),
            ("traces", "val_dir") => self.traces.val_dir = parse_path(value),
            ("traces", "test_dir") => self.traces.test_dir = parse_path(value),
            ("traces", "train_count") => self.traces.train_count = parse(k, value)?,
            ("traces", "val_count") => self.traces.val_count = parse(k, value)?,
            ("traces", "test_count") => self.traces.test_count = parse(k, value)?,
            ("traces", "duration") => self.traces.duration = parse(k, value)?,
            ("traces", "mean_bandwidth") => self.traces.mean_bandwidth = parse(k, value)?,
            ("traces", "volatility") => self.traces.volatility = parse(k, value)?,
            ("traces", "seed") => self.traces.seed = parse(k, value)?,

            ("eval", "loss") => self.eval.loss = parse_list(k, value)?,
            ("eval", "threads") => self.eval.threads = parse(k, value)?,
            ("eval", "seed") => self.eval.seed = parse(k, value)?,

            _ => return Err(Error::Config(format!("unknown key {k}"))),
        }
        Ok(())
    }

    pub fn video_spec(&self) -> Result<VideoSpec> {
        let v = &self.video;
        VideoSpec::generate(
            v.bitrates_kbps.clone(),
            v.chunk_duration,
            v.num_chunks,
            v.buffer_capacity,
            v.seed,
        )
    }

    pub fn qoe_config(&self) -> Result<QoeConfig> {
        self.qoe_config_for(self.qoe.variant)
    }

    /// QoE config of `variant` sharing this file's penalty and table
    /// overrides; a penalty override only applies to the configured variant.
    pub fn qoe_config_for(&self, variant: QoeVariant) -> Result<QoeConfig> {
        let penalty = (variant == self.qoe.variant)
            .then_some(self.qoe.rebuffer_penalty)
            .flatten();
        QoeConfig::with_options(
            variant,
            &self.video.bitrates_kbps,
            penalty,
            self.qoe.hd_table.clone(),
        )
    }

    /// Training setup for `qoe` on the train and validation sets of `sets`.
    pub fn train_config(&self, sets: &TraceSets, qoe: QoeConfig) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            hp: t.hp.clone(),
            hidden: t.hidden.clone(),
            train_traces: sets.train.clone(),
            val_traces: sets.val.clone(),
            qoe,
            video: self.video_spec()?,
            loss: LossModel::lossless(),
            seed: t.seed,
            eval_seed: t.eval_seed,
            val_interval: t.val_interval,
            checkpoint_dir: None,
            threaded: t.threaded,
            force_unit_weights: false,
        })
    }

    /// Checks every value that can be checked without touching the disk.
    pub fn validate(&self) -> Result<()> {
        self.video_spec()?;
        self.qoe_config()?;
        self.train.hp.validate()?;
        self.baselines.validate()?;
        self.eval.loss_models()?;
        if self.train.val_interval == 0 {
            return Err(Error::Config("train.val_interval must be positive".into()));
        }
        if self.train.hidden.is_empty() || self.train.hidden.contains(&0) {
            return Err(Error::Config("train.hidden needs positive widths".into()));
        }
        if self.eval.threads == 0 {
            return Err(Error::Config("eval.threads must be positive".into()));
        }
        self.traces.synthetic_spec(1).validate()
    }
}

impl fmt::Display for Settings {
    /// Renders a file that parses back to the same settings.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list<T: fmt::Display>(xs: &[T]) -> String {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        }
        fn path(p: &Option<PathBuf>) -> String {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        }
        let (v, t, q, b, tr, e) = (
            &self.video,
            &self.train,
            &self.qoe,
            &self.baselines,
            &self.traces,
            &self.eval,
        );
        writeln!(f, "[video]")?;
        writeln!(f, "bitrates_kbps = {}", list(&v.bitrates_kbps))?;
        writeln!(f, "chunk_duration = {}", v.chunk_duration)?;
        writeln!(f, "num_chunks = {}", v.num_chunks)?;
        writeln!(f, "buffer_capacity = {}", v.buffer_capacity)?;
        writeln!(f, "seed = {}", v.seed)?;
        writeln!(f, "\n[train]")?;
        writeln!(f, "gamma = {}", t.hp.gamma)?;
        writeln!(f, "actor_lr = {}", t.hp.actor_lr)?;
        writeln!(f, "critic_lr = {}", t.hp.critic_lr)?;
        writeln!(f, "entropy = {}", t.hp.entropy)?;
        writeln!(f, "rho_bar = {}", t.hp.rho_bar)?;
        writeln!(f, "c_bar = {}", t.hp.c_bar)?;
        writeln!(f, "epochs = {}", t.hp.epochs)?;
        writeln!(f, "actors = {}", t.hp.actors)?;
        writeln!(f, "sync_interval = {}", t.hp.sync_interval)?;
        writeln!(f, "hidden = {}", list(&t.hidden))?;
        writeln!(f, "val_interval = {}", t.val_interval)?;
        writeln!(f, "seed = {}", t.seed)?;
        writeln!(f, "eval_seed = {}", t.eval_seed)?;
        writeln!(f, "threaded = {}", t.threaded)?;
        writeln!(f, "\n[qoe]")?;
        writeln!(f, "variant = {}", q.variant)?;
        if let Some(p) = q.rebuffer_penalty {
            writeln!(f, "rebuffer_penalty = {p}")?;
        }
        if let Some(table) = &q.hd_table {
            writeln!(f, "hd_table = {}", list(table))?;
        }
        writeln!(f, "\n[baselines]")?;
        writeln!(f, "bb_reservoir = {}", b.bb_reservoir)?;
        writeln!(f, "bb_cushion = {}", b.bb_cushion)?;
        writeln!(f, "rb_window = {}", b.rb_window)?;
        writeln!(f, "bola_utility_weight = {}", b.bola_utility_weight)?;
        writeln!(f, "bola_startup = {}", b.bola_startup)?;
        writeln!(f, "mpc_horizon = {}", b.mpc_horizon)?;
        writeln!(f, "mpc_error_window = {}", b.mpc_error_window)?;
        writeln!(f, "\n[traces]")?;
        writeln!(f, "train_dir = {}", path(&tr.train_dir))?;
        writeln!(f, "val_dir = {}", path(&tr.val_dir))?;
        writeln!(f, "test_dir = {}", path(&tr.test_dir))?;
        writeln!(f, "train_count = {}", tr.train_count)?;
        writeln!(f, "val_count = {}", tr.val_count)?;
        writeln!(f, "test_count = {}", tr.test_count)?;
        writeln!(f, "duration = {}", tr.duration)?;
        writeln!(f, "mean_bandwidth = {}", tr.mean_bandwidth)?;
        writeln!(f, "volatility = {}", tr.volatility)?;
        writeln!(f, "seed = {}", tr.seed)?;
        writeln!(f, "\n[eval]")?;
        writeln!(f, "loss = {}", list(&e.loss))?;
        writeln!(f, "threads = {}", e.threads)?;
        writeln!(f, "seed = {}", e.seed)
    }
}
