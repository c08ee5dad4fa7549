//! Quality-of-experience metric.
//!
//! Per session: `Σ q(b_n) − μ Σ T_n − Σ |q(b_{n+1}) − q(b_n)|`, where `q`
//! is the per-level quality, `T_n` the stall time before chunk `n` and `μ`
//! the rebuffer penalty. Three quality mappings are supported.

use std::fmt;
use std::str::FromStr;

use crate::stream_env::{StepOutcome, DEFAULT_BITRATES_KBPS};
use crate::{Error, Result};

pub const LINEAR_REBUFFER_PENALTY: f64 = 4.3;
pub const LOG_REBUFFER_PENALTY: f64 = 2.66;
pub const HD_REBUFFER_PENALTY: f64 = 8.0;
pub const DEFAULT_HD_TABLE: [f64; 6] = [1.0, 2.0, 3.0, 12.0, 15.0, 20.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QoeVariant {
    /// Quality is the bitrate in Mbps.
    Linear,
    /// Quality is `ln(b / b_min)`.
    Log,
    /// Quality is looked up in a table favouring HD levels.
    Hd,
}

impl QoeVariant {
    pub const ALL: [QoeVariant; 3] = [QoeVariant::Linear, QoeVariant::Log, QoeVariant::Hd];

    pub fn as_str(self) -> &'static str {
        match self {
            QoeVariant::Linear => "lin",
            QoeVariant::Log => "log",
            QoeVariant::Hd => "hd",
        }
    }

    pub fn default_rebuffer_penalty(self) -> f64 {
        match self {
            QoeVariant::Linear => LINEAR_REBUFFER_PENALTY,
            QoeVariant::Log => LOG_REBUFFER_PENALTY,
            QoeVariant::Hd => HD_REBUFFER_PENALTY,
        }
    }
}

impl fmt::Display for QoeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QoeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lin" | "linear" => Ok(QoeVariant::Linear),
            "log" => Ok(QoeVariant::Log),
            "hd" => Ok(QoeVariant::Hd),
            other => Err(Error::InvalidArgument(format!(
                "unknown QoE variant {other:?}"
            ))),
        }
    }
}

/// Reward configuration bound to a bitrate ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct QoeConfig {
    variant: QoeVariant,
    rebuffer_penalty: f64,
    /// Quality of each level under the selected variant.
    qualities: Vec<f64>,
}

impl QoeConfig {
    /// Default penalty for the variant and the default HD table.
    pub fn new(variant: QoeVariant, bitrates_kbps: &[f64]) -> Result<Self> {
        Self::with_options(variant, bitrates_kbps, None, None)
    }

    /// `rebuffer_penalty` and `hd_table` override the variant defaults.
    /// The HD table must have one strictly increasing entry per level.
    pub fn with_options(
        variant: QoeVariant,
        bitrates_kbps: &[f64],
        rebuffer_penalty: Option<f64>,
        hd_table: Option<Vec<f64>>,
    ) -> Result<Self> {
        if bitrates_kbps.is_empty() || bitrates_kbps[0] <= 0.0 {
            return Err(Error::InvalidArgument("invalid bitrate ladder".into()));
        }
        let rebuffer_penalty = rebuffer_penalty.unwrap_or(variant.default_rebuffer_penalty());
        if !(rebuffer_penalty.is_finite() && rebuffer_penalty >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rebuffer penalty must be >= 0, got {rebuffer_penalty}"
            )));
        }
        let qualities = match variant {
            QoeVariant::Linear => bitrates_kbps.iter().map(|b| b / 1000.0).collect(),
            QoeVariant::Log => {
                let b_min = bitrates_kbps[0];
                bitrates_kbps.iter().map(|b| (b / b_min).ln()).collect()
            }
            QoeVariant::Hd => {
                let table = hd_table.unwrap_or_else(|| DEFAULT_HD_TABLE.to_vec());
                if table.len() != bitrates_kbps.len() {
                    return Err(Error::InvalidArgument(format!(
                        "HD table has {} entries for {} levels",
                        table.len(),
                        bitrates_kbps.len()
                    )));
                }
                if table.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidArgument(
                        "HD quality table must be strictly increasing".into(),
                    ));
                }
                table
            }
        };
        Ok(Self {
            variant,
            rebuffer_penalty,
            qualities,
        })
    }

    pub fn linear() -> Self {
        Self::new(QoeVariant::Linear, &DEFAULT_BITRATES_KBPS).expect("default ladder")
    }

    pub fn log() -> Self {
        Self::new(QoeVariant::Log, &DEFAULT_BITRATES_KBPS).expect("default ladder")
    }

    pub fn hd() -> Self {
        Self::new(QoeVariant::Hd, &DEFAULT_BITRATES_KBPS).expect("default ladder")
    }

    pub fn variant(&self) -> QoeVariant {
        self.variant
    }

    pub fn rebuffer_penalty(&self) -> f64 {
        self.rebuffer_penalty
    }

    pub fn num_levels(&self) -> usize {
        self.qualities.len()
    }

    pub fn quality(&self, level: usize) -> f64 {
        self.qualities[level]
    }

    /// Reward of one chunk. `prev_level` is `None` for the first chunk,
    /// which carries no smoothness term.
    pub fn step_reward(
        &self,
        prev_level: Option<usize>,
        level: usize,
        rebuffer: f64,
    ) -> Result<f64> {
        let parts = self.step_components(prev_level, level, rebuffer)?;
        Ok(parts.quality - parts.rebuffer_penalty - parts.smoothness_penalty)
    }

    fn step_components(
        &self,
        prev_level: Option<usize>,
        level: usize,
        rebuffer: f64,
    ) -> Result<StepComponents> {
        let levels = self.num_levels();
        if level >= levels || prev_level.is_some_and(|p| p >= levels) {
            return Err(Error::ActionOutOfRange {
                action: level.max(prev_level.unwrap_or(0)),
                levels,
            });
        }
        if !(rebuffer >= 0.0 && rebuffer.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rebuffer time must be a finite non-negative number, got {rebuffer}"
            )));
        }
        let quality = self.quality(level);
        let smoothness_penalty = prev_level.map_or(0.0, |p| (quality - self.quality(p)).abs());
        Ok(StepComponents {
            quality,
            rebuffer_penalty: self.rebuffer_penalty * rebuffer,
            smoothness_penalty,
        })
    }

    /// Session QoE of a complete episode starting from the first chunk.
    pub fn episode_qoe(&self, outcomes: &[StepOutcome]) -> Result<QoeBreakdown> {
        self.episode_qoe_after(None, outcomes)
    }

    /// QoE of a contiguous slice of an episode whose preceding chunk was
    /// played at `prev_level`. Summing the breakdowns of consecutive slices
    /// gives the breakdown of the whole episode.
    pub fn episode_qoe_after(
        &self,
        prev_level: Option<usize>,
        outcomes: &[StepOutcome],
    ) -> Result<QoeBreakdown> {
        if outcomes.is_empty() {
            return Err(Error::InvalidArgument("empty episode".into()));
        }
        let mut breakdown = QoeBreakdown::default();
        let mut prev = prev_level;
        for outcome in outcomes {
            let parts = self.step_components(prev, outcome.level, outcome.rebuffer_time)?;
            breakdown.quality_sum += parts.quality;
            breakdown.rebuffer_penalty_sum += parts.rebuffer_penalty;
            breakdown.smoothness_penalty_sum += parts.smoothness_penalty;
            breakdown.chunks += 1;
            prev = Some(outcome.level);
        }
        breakdown.total = breakdown.compose_total();
        Ok(breakdown)
    }
}

struct StepComponents {
    quality: f64,
    rebuffer_penalty: f64,
    smoothness_penalty: f64,
}

/// Session QoE split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QoeBreakdown {
    pub total: f64,
    pub quality_sum: f64,
    pub rebuffer_penalty_sum: f64,
    pub smoothness_penalty_sum: f64,
    pub chunks: usize,
}

impl QoeBreakdown {
    fn compose_total(&self) -> f64 {
        self.quality_sum - self.rebuffer_penalty_sum - self.smoothness_penalty_sum
    }

    /// Component-wise sum, as for consecutive slices of one session.
    pub fn merge(&self, other: &QoeBreakdown) -> QoeBreakdown {
        let mut out = QoeBreakdown {
            total: 0.0,
            quality_sum: self.quality_sum + other.quality_sum,
            rebuffer_penalty_sum: self.rebuffer_penalty_sum + other.rebuffer_penalty_sum,
            smoothness_penalty_sum: self.smoothness_penalty_sum + other.smoothness_penalty_sum,
            chunks: self.chunks + other.chunks,
        };
        out.total = out.compose_total();
        out
    }
}
