//! Network bandwidth traces.
//!
//! A trace is a sequence of `(timestamp, bandwidth)` samples replayed as a
//! zero-order-hold channel: the bandwidth of sample `i` holds on
//! `[t_i, t_{i+1})`. The on-disk format is one `<seconds> <Mbps>` pair per
//! line, which is what most cooked record-and-replay corpora reduce to.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// File extension picked up by [`load_trace_dir`].
pub const TRACE_EXTENSION: &str = "trace";

/// Time-stamped bandwidth samples. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTrace {
    id: String,
    timestamps: Vec<f64>,
    bandwidths: Vec<f64>,
}

impl NetworkTrace {
    /// Builds a trace from `(seconds, Mbps)` samples, enforcing the trace
    /// invariants (≥ 2 samples, strictly increasing non-negative timestamps,
    /// positive finite bandwidths).
    pub fn new(id: impl Into<String>, samples: Vec<(f64, f64)>) -> Result<Self> {
        let id = id.into();
        if samples.len() < 2 {
            return Err(Error::InvalidTrace(format!(
                "{id}: need at least 2 samples, got {}",
                samples.len()
            )));
        }
        let mut timestamps = Vec::with_capacity(samples.len());
        let mut bandwidths = Vec::with_capacity(samples.len());
        for (i, &(t, bw)) in samples.iter().enumerate() {
            check_sample(&id, i, t, bw, timestamps.last().copied())?;
            timestamps.push(t);
            bandwidths.push(bw);
        }
        Ok(Self {
            id,
            timestamps,
            bandwidths,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.timestamps
            .iter()
            .copied()
            .zip(self.bandwidths.iter().copied())
    }

    pub fn start(&self) -> f64 {
        self.timestamps[0]
    }

    pub fn end(&self) -> f64 {
        self.timestamps[self.timestamps.len() - 1]
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    /// Index of the sample whose hold interval contains `t`.
    ///
    /// `t` must lie in `[start, end]`; `end` maps to the last sample.
    pub fn segment_index(&self, t: f64) -> Result<usize> {
        if !(t >= self.start() && t <= self.end()) {
            return Err(Error::TimeOutOfRange {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        // Last index with timestamp <= t.
        Ok(self.timestamps.partition_point(|&ts| ts <= t) - 1)
    }

    /// Raw (lossless) bandwidth at `t`, zero-order hold.
    pub fn bandwidth_at(&self, t: f64) -> Result<f64> {
        Ok(self.bandwidths[self.segment_index(t)?])
    }
}

fn check_sample(id: &str, i: usize, t: f64, bw: f64, prev: Option<f64>) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidTrace(format!(
            "{id}: sample {i} has invalid timestamp {t}"
        )));
    }
    if let Some(prev) = prev {
        if t <= prev {
            return Err(Error::InvalidTrace(format!(
                "{id}: non-monotonic timestamps at sample {i} ({t} after {prev})"
            )));
        }
    }
    if !bw.is_finite() || bw <= 0.0 {
        return Err(Error::InvalidTrace(format!(
            "{id}: non-positive bandwidth {bw} at sample {i}"
        )));
    }
    Ok(())
}

/// Packet-loss severity used for lossy evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossModel {
    loss_probability: f64,
}

impl LossModel {
    pub fn new(loss_probability: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&loss_probability) {
            return Err(Error::InvalidArgument(format!(
                "loss probability must lie in [0, 1), got {loss_probability}"
            )));
        }
        Ok(Self { loss_probability })
    }

    pub fn lossless() -> Self {
        Self::default()
    }

    pub fn probability(&self) -> f64 {
        self.loss_probability
    }

    /// Fraction of raw channel capacity that carries useful payload.
    pub fn delivery_fraction(&self) -> f64 {
        1.0 - self.loss_probability
    }
}

/// Bandwidth available to the player at trace time `t` under `loss`.
pub fn effective_throughput(trace: &NetworkTrace, t: f64, loss: LossModel) -> Result<f64> {
    Ok(trace.bandwidth_at(t)? * loss.delivery_fraction())
}

/// Parses trace text. `source` is only used in error messages.
pub fn parse_trace(id: impl Into<String>, source: &str, text: &str) -> Result<NetworkTrace> {
    let id = id.into();
    let mut samples = Vec::new();
    let mut prev: Option<f64> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: lineno + 1,
            msg,
        };
        let mut fields = line.split_whitespace();
        let (Some(ts), Some(bw), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(format!(
                "expected `<seconds> <mbps>`, got {line:?}"
            )));
        };
        let t: f64 = ts
            .parse()
            .map_err(|_| parse_err(format!("bad timestamp {ts:?}")))?;
        let bw: f64 = bw
            .parse()
            .map_err(|_| parse_err(format!("bad bandwidth {bw:?}")))?;
        check_sample(&id, samples.len(), t, bw, prev).map_err(|e| match e {
            Error::InvalidTrace(msg) => parse_err(msg),
            other => other,
        })?;
        prev = Some(t);
        samples.push((t, bw));
    }
    NetworkTrace::new(id, samples)
}

/// Loads a trace file. The trace id is the file stem.
pub fn load_trace(path: impl AsRef<Path>) -> Result<NetworkTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_trace(id, &path.display().to_string(), &text)
}

/// Loads every `*.trace` file in `dir`, sorted by file name.
pub fn load_trace_dir(dir: impl AsRef<Path>) -> Result<Vec<NetworkTrace>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|ext| ext == TRACE_EXTENSION) {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(load_trace).collect()
}

/// Serialises a trace in the on-disk format. Uses Rust's shortest
/// round-trip float formatting, so parsing the output is lossless.
pub fn format_trace(trace: &NetworkTrace) -> String {
    let mut out = String::with_capacity(trace.len() * 16);
    for (t, bw) in trace.samples() {
        let _ = writeln!(out, "{t:?} {bw:?}");
    }
    out
}

pub fn write_trace(trace: &NetworkTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_trace(trace)).map_err(|e| Error::io(path, e))
}

/// Writes each trace as `<dir>/<id>.trace`, creating `dir` if needed.
pub fn write_trace_dir(traces: &[NetworkTrace], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for trace in traces {
        write_trace(trace, dir.join(format!("{}.{TRACE_EXTENSION}", trace.id())))?;
    }
    Ok(())
}

/// Parameters of the synthetic trace generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTraceSpec {
    pub num_traces: usize,
    /// Seconds; samples are spaced 1 s apart, so a trace has
    /// `floor(duration) + 1` samples.
    pub duration: f64,
    pub mean_bandwidth: f64,
    /// Per-second standard deviation of the log-bandwidth innovation.
    pub volatility: f64,
    pub seed: u64,
}

impl Default for SyntheticTraceSpec {
    fn default() -> Self {
        Self {
            num_traces: 20,
            duration: 400.0,
            mean_bandwidth: 2.5,
            volatility: 0.15,
            seed: 0,
        }
    }
}

impl SyntheticTraceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "synthetic duration must be >= 1 s, got {}",
                self.duration
            )));
        }
        if !(self.mean_bandwidth.is_finite() && self.mean_bandwidth > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mean bandwidth must be positive, got {}",
                self.mean_bandwidth
            )));
        }
        if !(self.volatility.is_finite() && self.volatility >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "volatility must be >= 0, got {}",
                self.volatility
            )));
        }
        Ok(())
    }
}

/// Mean-reversion rate of the log-bandwidth walk, per second.
const REVERSION_RATE: f64 = 0.05;

/// Generates `spec.num_traces` traces from a mean-reverting random walk in
/// log-bandwidth space, clamped to `[0.1, 10 * mean]` Mbps.
///
/// Each trace draws from its own ChaCha stream keyed by `(seed, index)`, so
/// the set is reproducible and trace `i` does not depend on `num_traces`.
pub fn generate_synthetic(spec: &SyntheticTraceSpec) -> Result<Vec<NetworkTrace>> {
    spec.validate()?;
    let samples_per_trace = spec.duration.floor() as usize + 1;
    let lo = 0.1_f64.min(spec.mean_bandwidth);
    let hi = 10.0 * spec.mean_bandwidth;
    let log_mean = spec.mean_bandwidth.ln();

    (0..spec.num_traces)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(index as u64);
            let mut log_bw = log_mean;
            let samples = (0..samples_per_trace)
                .map(|k| {
                    if k > 0 {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        log_bw += REVERSION_RATE * (log_mean - log_bw) + spec.volatility * noise;
                    }
                    let bw = if spec.volatility == 0.0 {
                        spec.mean_bandwidth
                    } else {
                        log_bw.exp().clamp(lo, hi)
                    };
                    (k as f64, bw)
                })
                .collect();
            NetworkTrace::new(format!("synth-{}-{index:04}", spec.seed), samples)
        })
        .collect()
}
