//! Vision-gated trajectory reward.
//!
//! `r_final = r_mllm * r_len`, where `r_mllm` is the mean of per-round critic
//! scores (each forced to 0 when its screenshots are invalid) and `r_len` is a
//! linear penalty that falls from 1 to 0 between two token counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::Capture;
use crate::traj::Trajectory;

/// Number of temporal captures per round.
pub const CAPTURES_PER_ROUND: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("score {0} outside [0,1]")]
    ScoreOutOfRange(f64),
    #[error("no round scores to aggregate")]
    EmptyTrajectory,
    #[error("invalid length bounds: start {start} must be in (0, end={end})")]
    InvalidBounds { start: usize, end: usize },
}

/// Three temporal captures of one rendered candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenshotSet {
    pub captures: Vec<Capture>,
    pub capture_offsets_ms: Vec<u64>,
    pub valid: bool,
}

impl ScreenshotSet {
    /// `valid` is forced to false unless exactly three captures are present.
    pub fn new(captures: Vec<Capture>, capture_offsets_ms: Vec<u64>, valid: bool) -> Self {
        let valid = valid && captures.len() == CAPTURES_PER_ROUND;
        ScreenshotSet {
            captures,
            capture_offsets_ms,
            valid,
        }
    }

    pub fn invalid() -> Self {
        ScreenshotSet {
            captures: Vec::new(),
            capture_offsets_ms: Vec::new(),
            valid: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LengthBounds {
    pub l_start: usize,
    pub l_end: usize,
}

impl Default for LengthBounds {
    fn default() -> Self {
        LengthBounds {
            l_start: 12_000,
            l_end: 14_000,
        }
    }
}

impl LengthBounds {
    pub fn new(l_start: usize, l_end: usize) -> Result<Self, RewardError> {
        let b = LengthBounds { l_start, l_end };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if self.l_start == 0 || self.l_start >= self.l_end {
            return Err(RewardError::InvalidBounds {
                start: self.l_start,
                end: self.l_end,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardBreakdown {
    pub r_mllm: f64,
    pub r_len: f64,
    pub r_final: f64,
    pub length_tokens: usize,
}

fn check_unit(score: f64) -> Result<f64, RewardError> {
    if (0.0..=1.0).contains(&score) {
        Ok(score)
    } else {
        Err(RewardError::ScoreOutOfRange(score))
    }
}

/// The critic score if the screenshots are valid, otherwise 0.
pub fn visual_gate(round_score: f64, shots: &ScreenshotSet) -> Result<f64, RewardError> {
    gate(round_score, shots.valid)
}

/// [`visual_gate`] on a bare validity flag.
pub fn gate(round_score: f64, valid: bool) -> Result<f64, RewardError> {
    let s = check_unit(round_score)?;
    Ok(if valid { s } else { 0.0 })
}

pub fn length_penalty(length_tokens: usize, bounds: LengthBounds) -> f64 {
    let LengthBounds { l_start, l_end } = bounds;
    if length_tokens < l_start {
        1.0
    } else if length_tokens <= l_end {
        (l_end - length_tokens) as f64 / (l_end - l_start) as f64
    } else {
        0.0
    }
}

/// Arithmetic mean of already-gated round scores.
pub fn aggregate_rounds(round_scores: &[f64]) -> Result<f64, RewardError> {
    if round_scores.is_empty() {
        return Err(RewardError::EmptyTrajectory);
    }
    for s in round_scores {
        check_unit(*s)?;
    }
    Ok(round_scores.iter().sum::<f64>() / round_scores.len() as f64)
}

/// Reward for a trajectory given its gated per-round scores.
pub fn trajectory_reward(
    trajectory: &Trajectory,
    gated_scores: &[f64],
    bounds: LengthBounds,
) -> Result<RewardBreakdown, RewardError> {
    let r_mllm = aggregate_rounds(gated_scores)?;
    let r_len = length_penalty(trajectory.total_token_count, bounds);
    Ok(RewardBreakdown {
        r_mllm,
        r_len,
        r_final: r_mllm * r_len,
        length_tokens: trajectory.total_token_count,
    })
}
