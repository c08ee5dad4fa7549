//! Chunk-level virtual video player.
//!
//! Each [`StreamEnv::step`] downloads one chunk at the requested level over
//! the replayed trace, drains the playback buffer by the download time and
//! appends one chunk of content. The buffer is capped at
//! `buffer_capacity`; when a download would overflow it the player idles
//! until the excess has played out, and the trace clock keeps running.
//!
//! Loss is applied twice: the channel only delivers a `1 - p` fraction of
//! its raw rate, and lost packets have to be sent again, so a chunk of `S`
//! megabits occupies the channel for `S / (1 - p)` megabits of payload.
//! On a constant-rate segment this is exactly the rate-scaled transfer time
//! multiplied by `1 / (1 - p)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::trace_store::{LossModel, NetworkTrace};
use crate::{Error, Result};

/// Number of past chunks kept in the throughput and download-time histories.
pub const HISTORY_LEN: usize = 8;

/// Default bitrate ladder in kbps.
pub const DEFAULT_BITRATES_KBPS: [f64; 6] = [300.0, 750.0, 1200.0, 1850.0, 2850.0, 4300.0];
pub const DEFAULT_CHUNK_DURATION: f64 = 4.0;
pub const DEFAULT_NUM_CHUNKS: usize = 48;
pub const DEFAULT_BUFFER_CAPACITY: f64 = 60.0;

/// Relative half-width of the per-chunk size variation.
pub const CHUNK_SIZE_JITTER: f64 = 0.1;

// Feature scaling used by `StreamState::features`.
const BUFFER_SCALE: f64 = 10.0;
const THROUGHPUT_SCALE: f64 = 5.0;
const DOWNLOAD_TIME_SCALE: f64 = 10.0;
const CHUNK_SIZE_SCALE: f64 = 20.0;

/// Encoding ladder and chunk table of the simulated video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSpec {
    bitrate_levels: Vec<f64>,
    chunk_duration: f64,
    /// `chunk_sizes[level][chunk]`, megabits.
    chunk_sizes: Vec<Vec<f64>>,
    buffer_capacity: f64,
}

impl VideoSpec {
    pub fn new(
        bitrate_levels: Vec<f64>,
        chunk_duration: f64,
        chunk_sizes: Vec<Vec<f64>>,
        buffer_capacity: f64,
    ) -> Result<Self> {
        if bitrate_levels.is_empty() {
            return Err(Error::InvalidVideo("empty bitrate ladder".into()));
        }
        if bitrate_levels[0] <= 0.0 || !bitrate_levels.iter().all(|b| b.is_finite()) {
            return Err(Error::InvalidVideo("bitrates must be positive".into()));
        }
        if bitrate_levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidVideo(
                "bitrate levels must be strictly increasing".into(),
            ));
        }
        if !(chunk_duration.is_finite() && chunk_duration > 0.0) {
            return Err(Error::InvalidVideo(format!(
                "chunk duration must be positive, got {chunk_duration}"
            )));
        }
        if !(buffer_capacity.is_finite() && buffer_capacity >= chunk_duration) {
            return Err(Error::InvalidVideo(format!(
                "buffer capacity {buffer_capacity} must hold at least one chunk"
            )));
        }
        if chunk_sizes.len() != bitrate_levels.len() {
            return Err(Error::InvalidVideo(format!(
                "chunk size table has {} levels, ladder has {}",
                chunk_sizes.len(),
                bitrate_levels.len()
            )));
        }
        let num_chunks = chunk_sizes[0].len();
        if num_chunks == 0 {
            return Err(Error::InvalidVideo("video has no chunks".into()));
        }
        for row in &chunk_sizes {
            if row.len() != num_chunks {
                return Err(Error::InvalidVideo("ragged chunk size table".into()));
            }
            if !row.iter().all(|&s| s.is_finite() && s > 0.0) {
                return Err(Error::InvalidVideo("chunk sizes must be positive".into()));
            }
        }
        Ok(Self {
            bitrate_levels,
            chunk_duration,
            chunk_sizes,
            buffer_capacity,
        })
    }

    /// Builds a chunk table of `chunk_duration * bitrate` megabits with a
    /// seeded ±10% per-chunk factor shared by all levels of the same chunk.
    pub fn generate(
        bitrate_levels: Vec<f64>,
        chunk_duration: f64,
        num_chunks: usize,
        buffer_capacity: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors: Vec<f64> = (0..num_chunks)
            .map(|_| 1.0 + CHUNK_SIZE_JITTER * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let chunk_sizes = bitrate_levels
            .iter()
            .map(|kbps| {
                let nominal = chunk_duration * kbps / 1000.0;
                factors.iter().map(|f| nominal * f).collect()
            })
            .collect();
        Self::new(bitrate_levels, chunk_duration, chunk_sizes, buffer_capacity)
    }

    /// Every chunk exactly `chunk_duration * bitrate` megabits.
    pub fn uniform(
        bitrate_levels: Vec<f64>,
        chunk_duration: f64,
        num_chunks: usize,
        buffer_capacity: f64,
    ) -> Result<Self> {
        let chunk_sizes = bitrate_levels
            .iter()
            .map(|kbps| vec![chunk_duration * kbps / 1000.0; num_chunks])
            .collect();
        Self::new(bitrate_levels, chunk_duration, chunk_sizes, buffer_capacity)
    }

    pub fn num_levels(&self) -> usize {
        self.bitrate_levels.len()
    }

    pub fn num_chunks(&self) -> usize {
        self.chunk_sizes[0].len()
    }

    pub fn bitrate_levels(&self) -> &[f64] {
        &self.bitrate_levels
    }

    pub fn bitrate_kbps(&self, level: usize) -> f64 {
        self.bitrate_levels[level]
    }

    pub fn chunk_duration(&self) -> f64 {
        self.chunk_duration
    }

    pub fn buffer_capacity(&self) -> f64 {
        self.buffer_capacity
    }

    pub fn chunk_size(&self, level: usize, chunk: usize) -> f64 {
        self.chunk_sizes[level][chunk]
    }

    pub fn chunk_sizes(&self) -> &[Vec<f64>] {
        &self.chunk_sizes
    }

    /// Size in megabits of a chunk encoded exactly at the level bitrate.
    pub fn nominal_size(&self, level: usize) -> f64 {
        self.chunk_duration * self.bitrate_levels[level] / 1000.0
    }

    /// Sizes of chunk `chunk` at every level, or zeros past the end.
    pub fn sizes_of_chunk(&self, chunk: usize) -> Vec<f64> {
        if chunk < self.num_chunks() {
            self.chunk_sizes.iter().map(|row| row[chunk]).collect()
        } else {
            vec![0.0; self.num_levels()]
        }
    }

    /// Shortest trace the player accepts: one chunk's worth of playback.
    /// Longer episodes wrap around to the trace start.
    pub fn min_trace_duration(&self) -> f64 {
        self.chunk_duration
    }
}

impl Default for VideoSpec {
    fn default() -> Self {
        Self::generate(
            DEFAULT_BITRATES_KBPS.to_vec(),
            DEFAULT_CHUNK_DURATION,
            DEFAULT_NUM_CHUNKS,
            DEFAULT_BUFFER_CAPACITY,
            0,
        )
        .expect("default video spec is valid")
    }
}

/// Observation handed to controllers before each chunk decision.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    /// Level of the previously downloaded chunk (0 before the first chunk).
    pub last_level: usize,
    /// Seconds of buffered content.
    pub buffer: f64,
    /// Measured throughput of past chunks, Mbps, newest first, zero-padded.
    pub throughput_history: [f64; HISTORY_LEN],
    /// Download time of past chunks, seconds, newest first, zero-padded.
    pub download_time_history: [f64; HISTORY_LEN],
    /// Size of the next chunk at each level, megabits.
    pub next_chunk_sizes: Vec<f64>,
    /// Fraction of chunks still to download.
    pub remaining_fraction: f64,
    /// Index of the next chunk. Not part of the feature vector.
    pub chunk_index: usize,
}

impl StreamState {
    fn initial(video: &VideoSpec) -> Self {
        Self {
            last_level: 0,
            buffer: 0.0,
            throughput_history: [0.0; HISTORY_LEN],
            download_time_history: [0.0; HISTORY_LEN],
            next_chunk_sizes: video.sizes_of_chunk(0),
            remaining_fraction: 1.0,
            chunk_index: 0,
        }
    }

    pub fn num_levels(&self) -> usize {
        self.next_chunk_sizes.len()
    }

    /// Whether a chunk has already been played, i.e. smoothness applies.
    pub fn has_previous(&self) -> bool {
        self.chunk_index > 0
    }

    /// Flattened, scaled network input:
    /// `[last_level, buffer, throughput x8, download_time x8, next_sizes x L, remaining]`.
    pub fn features(&self) -> Vec<f64> {
        let levels = self.num_levels();
        let mut out = Vec::with_capacity(feature_len(levels));
        out.push(if levels > 1 {
            self.last_level as f64 / (levels - 1) as f64
        } else {
            0.0
        });
        out.push(self.buffer / BUFFER_SCALE);
        out.extend(self.throughput_history.iter().map(|x| x / THROUGHPUT_SCALE));
        out.extend(
            self.download_time_history
                .iter()
                .map(|x| x / DOWNLOAD_TIME_SCALE),
        );
        out.extend(self.next_chunk_sizes.iter().map(|x| x / CHUNK_SIZE_SCALE));
        out.push(self.remaining_fraction);
        out
    }
}

/// Length of [`StreamState::features`] for a ladder with `levels` levels.
pub const fn feature_len(levels: usize) -> usize {
    2 + 2 * HISTORY_LEN + levels + 1
}

/// Result of downloading one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: StreamState,
    pub level: usize,
    pub chunk_index: usize,
    pub download_time: f64,
    pub rebuffer_time: f64,
    /// Time spent waiting because the buffer was full.
    pub idle_time: f64,
    pub chosen_bitrate: f64,
    pub done: bool,
}

/// One playback session over one trace.
#[derive(Debug, Clone)]
pub struct StreamEnv<'a> {
    trace: &'a NetworkTrace,
    video: &'a VideoSpec,
    loss: LossModel,
    clock: f64,
    state: StreamState,
}

impl<'a> StreamEnv<'a> {
    /// Starts a session with an empty buffer. The playhead starts at a trace
    /// offset drawn from `seed`.
    pub fn reset(
        trace: &'a NetworkTrace,
        video: &'a VideoSpec,
        loss: LossModel,
        seed: u64,
    ) -> Result<Self> {
        let min = video.min_trace_duration();
        if trace.duration() < min {
            return Err(Error::TraceTooShort {
                id: trace.id().to_string(),
                duration: trace.duration(),
                min,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clock = trace.start() + rng.random::<f64>() * trace.duration();
        Ok(Self {
            trace,
            video,
            loss,
            clock,
            state: StreamState::initial(video),
        })
    }

    pub fn state(&self) -> &StreamState {
        &self.state
    }

    pub fn video(&self) -> &VideoSpec {
        self.video
    }

    pub fn trace(&self) -> &NetworkTrace {
        self.trace
    }

    /// Current position of the playhead in trace time.
    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn is_done(&self) -> bool {
        self.state.chunk_index >= self.video.num_chunks()
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let levels = self.video.num_levels();
        if action >= levels {
            return Err(Error::ActionOutOfRange { action, levels });
        }
        if self.is_done() {
            return Err(Error::EpisodeFinished);
        }
        let chunk = self.state.chunk_index;
        let size = self.video.chunk_size(action, chunk);
        let fraction = self.loss.delivery_fraction();
        let download_time = self.transfer(size / fraction, fraction);

        let buffer = self.state.buffer;
        let rebuffer_time = (download_time - buffer).max(0.0);
        let mut next_buffer = (buffer - download_time).max(0.0) + self.video.chunk_duration();
        let mut idle_time = 0.0;
        if next_buffer > self.video.buffer_capacity() {
            idle_time = next_buffer - self.video.buffer_capacity();
            next_buffer = self.video.buffer_capacity();
            self.advance(idle_time);
        }

        let state = &mut self.state;
        state.throughput_history.rotate_right(1);
        state.throughput_history[0] = size / download_time;
        state.download_time_history.rotate_right(1);
        state.download_time_history[0] = download_time;
        state.last_level = action;
        state.buffer = next_buffer;
        state.chunk_index = chunk + 1;
        state.next_chunk_sizes = self.video.sizes_of_chunk(chunk + 1);
        let total = self.video.num_chunks();
        state.remaining_fraction = (total - state.chunk_index) as f64 / total as f64;

        Ok(StepOutcome {
            next_state: state.clone(),
            level: action,
            chunk_index: chunk,
            download_time,
            rebuffer_time,
            idle_time,
            chosen_bitrate: self.video.bitrate_kbps(action),
            done: state.chunk_index == total,
        })
    }

    /// Moves `payload` megabits through the channel at `fraction` of the raw
    /// trace rate, advancing the clock. Returns the elapsed time.
    fn transfer(&mut self, payload: f64, fraction: f64) -> f64 {
        let ts = self.trace.timestamps();
        let bws = self.trace.bandwidths();
        let end = self.trace.end();
        let mut remaining = payload;
        let mut elapsed = 0.0;
        loop {
            // clock is always in [start, end), so idx + 1 is a valid sample
            let idx = ts.partition_point(|&t| t <= self.clock) - 1;
            let rate = bws[idx] * fraction;
            let window = ts[idx + 1] - self.clock;
            let capacity = rate * window;
            if capacity >= remaining {
                let dt = remaining / rate;
                elapsed += dt;
                self.advance(dt);
                return elapsed;
            }
            remaining -= capacity;
            elapsed += window;
            self.clock = ts[idx + 1];
            if self.clock >= end {
                self.clock = self.trace.start();
            }
        }
    }

    fn advance(&mut self, dt: f64) {
        let start = self.trace.start();
        let duration = self.trace.duration();
        self.clock += dt;
        if self.clock >= self.trace.end() {
            self.clock = start + (self.clock - start).rem_euclid(duration);
        }
    }
}
