//! Line-delimited trajectory records and the run directory they live in.
//!
//! Every record is one JSON object per line. Readers reject unknown fields
//! and records whose numbers do not add up.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grpo::StandardizationScope;
use crate::reward::RewardBreakdown;
use crate::rollout::{AcceptanceMode, RolloutOutcome, RoundLog, Termination};
use crate::traj::{tag_origins, CharTokenizer, OriginSummary};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Schema { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundSummary {
    pub round: usize,
    /// Gated score of the kept candidate.
    pub score: f64,
    /// False when the kept candidate had no code to score.
    pub scored: bool,
    pub valid: bool,
    pub requested_feedback: bool,
    pub feedback_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceSummary {
    pub mode: AcceptanceMode,
    pub termination: Termination,
    /// Candidates sampled in each round, kept or not.
    pub attempts_used: Vec<usize>,
    pub accepted: Vec<bool>,
    pub critic_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub schema: u32,
    pub query_id: String,
    /// Position in the query's group.
    pub index: usize,
    pub seed: u64,
    pub rounds: Vec<RoundSummary>,
    pub origins: OriginSummary,
    pub reward: RewardBreakdown,
    pub best_score: f64,
    pub truncated: bool,
    pub acceptance: AcceptanceSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage_scope: Option<StandardizationScope>,
    /// Serialized trajectory text.
    pub output: String,
}

impl TrajectoryRecord {
    pub fn from_outcome(
        query_id: &str,
        index: usize,
        mode: AcceptanceMode,
        o: &RolloutOutcome,
    ) -> Self {
        let kept: Vec<&RoundLog> = o.acceptance_log.iter().filter(|r| r.accepted).collect();
        let rounds = o
            .trajectory
            .rounds
            .iter()
            .enumerate()
            .map(|(i, r)| RoundSummary {
                round: r.index,
                score: o.gated_scores.get(i).copied().unwrap_or(0.0),
                scored: r.round_score.is_some(),
                valid: kept
                    .get(i)
                    .and_then(|l| l.attempts.iter().find(|a| a.accepted))
                    .is_some_and(|a| a.valid),
                requested_feedback: r.requested_feedback,
                feedback_chars: r.feedback.as_deref().map_or(0, |f| f.chars().count()),
            })
            .collect();
        TrajectoryRecord {
            schema: SCHEMA_VERSION,
            query_id: query_id.to_string(),
            index,
            seed: o.seed,
            rounds,
            origins: OriginSummary::from_origins(&tag_origins(&o.trajectory, &CharTokenizer)),
            reward: o.reward,
            best_score: o.best_score,
            truncated: o.trajectory.truncated,
            acceptance: AcceptanceSummary {
                mode,
                termination: o.termination,
                attempts_used: o.acceptance_log.iter().map(|r| r.attempts_used).collect(),
                accepted: o.acceptance_log.iter().map(|r| r.accepted).collect(),
                critic_calls: o
                    .acceptance_log
                    .iter()
                    .flat_map(|r| &r.attempts)
                    .filter(|a| a.critic_called)
                    .count(),
            },
            advantage_scope: None,
            output: o.trajectory.output_text(),
        }
    }

    /// Internal consistency beyond what the types enforce.
    pub fn check(&self) -> Result<(), String> {
        if self.schema != SCHEMA_VERSION {
            return Err(format!("schema {} != {SCHEMA_VERSION}", self.schema));
        }
        if self.rounds.is_empty() {
            return Err("no rounds".into());
        }
        for (i, r) in self.rounds.iter().enumerate() {
            if r.round != i + 1 {
                return Err(format!("round {} listed at position {}", r.round, i + 1));
            }
            if !(0.0..=1.0).contains(&r.score) {
                return Err(format!("round {} score {} outside [0,1]", r.round, r.score));
            }
        }
        let rw = &self.reward;
        for v in [rw.r_mllm, rw.r_len, rw.r_final] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("reward term {v} outside [0,1]"));
            }
        }
        let mean = self.rounds.iter().map(|r| r.score).sum::<f64>() / self.rounds.len() as f64;
        if (mean - rw.r_mllm).abs() > 1e-12 || (rw.r_mllm * rw.r_len - rw.r_final).abs() > 1e-12 {
            return Err("reward breakdown does not match round scores".into());
        }
        if self.origins.total_tokens != rw.length_tokens
            || self.origins.policy_tokens + self.origins.critic_tokens != self.origins.total_tokens
        {
            return Err("origin summary does not match token count".into());
        }
        let a = &self.acceptance;
        if a.attempts_used.len() != a.accepted.len()
            || a.accepted.iter().filter(|x| **x).count() != self.rounds.len()
        {
            return Err("acceptance log does not match kept rounds".into());
        }
        Ok(())
    }
}

/// Full per-attempt acceptance diagnostics, kept beside the main log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceRecord {
    pub schema: u32,
    pub query_id: String,
    pub index: usize,
    pub seed: u64,
    pub rounds: Vec<RoundLog>,
}

impl AcceptanceRecord {
    pub fn from_outcome(query_id: &str, index: usize, o: &RolloutOutcome) -> Self {
        AcceptanceRecord {
            schema: SCHEMA_VERSION,
            query_id: query_id.to_string(),
            index,
            seed: o.seed,
            rounds: o.acceptance_log.clone(),
        }
    }
}

/// Records held in memory until the run is known to be complete.
#[derive(Debug, Default, Clone)]
pub struct JsonlBuffer {
    lines: Vec<String>,
}

impl JsonlBuffer {
    pub fn push<T: Serialize>(&mut self, record: &T) {
        self.lines
            .push(serde_json::to_string(record).expect("records serialize"));
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.lines.iter().map(|l| format!("{l}\n")).collect()
    }

    /// Write to a file that must not exist yet.
    pub fn write_new(&self, path: &Path) -> Result<(), LogError> {
        write_new(path, self.to_text().as_bytes())
    }
}

pub fn write_new(path: &Path, bytes: &[u8]) -> Result<(), LogError> {
    let io = |source| LogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(io)?;
    f.write_all(bytes).map_err(io)
}

/// Parse every line of a JSONL file, rejecting unknown fields.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, LogError> {
    let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_jsonl(&text)
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, LogError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LogError::Schema {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn read_trajectory_log(path: &Path) -> Result<Vec<TrajectoryRecord>, LogError> {
    let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let records: Vec<TrajectoryRecord> = parse_jsonl(&text)?;
    for (i, r) in records.iter().enumerate() {
        r.check().map_err(|reason| LogError::Schema {
            line: i + 1,
            reason,
        })?;
    }
    Ok(records)
}

/// Layout of one run: config snapshot, logs, screenshots and reports.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, LogError> {
        let d = RunDir {
            root: root.to_path_buf(),
        };
        for p in [d.root.clone(), d.reports()] {
            std::fs::create_dir_all(&p).map_err(|source| LogError::Io {
                path: p.clone(),
                source,
            })?;
        }
        Ok(d)
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn trajectories(&self) -> PathBuf {
        self.root.join("trajectories.jsonl")
    }

    pub fn acceptance(&self) -> PathBuf {
        self.root.join("acceptance.jsonl")
    }

    pub fn critic_transcript(&self) -> PathBuf {
        self.root.join("critic_transcript.jsonl")
    }

    pub fn screenshots(&self) -> PathBuf {
        self.root.join("screenshots")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}
