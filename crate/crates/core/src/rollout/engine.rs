use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ports::{AttemptContext, Decoding, GeneratorError, GeneratorPort, Ports};
use crate::critic::CriticError;
use crate::grpo::{GroupRollouts, GrpoError, TokenizedTrajectory};
use crate::render::RenderError;
use crate::reward::{gate, trajectory_reward, LengthBounds, RewardBreakdown, RewardError};
use crate::rng::{derive_seed, hash_str};
use crate::traj::{
    compose_history, parse_round, CandidateRound, CharTokenizer, Query, RoundBlock, TrajError,
    Trajectory,
};

pub const DEFAULT_SELF_EDIT_CAP: usize = 3;

/// Whether a candidate must beat the best score so far to be kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceMode {
    /// Keep a candidate only if it strictly improves on the best so far;
    /// otherwise resample up to the budget.
    #[default]
    Forced,
    /// Keep the first candidate of every round.
    AcceptAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub group_size: usize,
    pub max_rounds: usize,
    pub max_resamples: usize,
    /// Base seed; trajectory `i` of query `q` uses
    /// `derive_seed(seed, [hash_str(q), i])` unless `seeds` lists it.
    pub seed: u64,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub decoding: Decoding,
    pub acceptance: AcceptanceMode,
    pub length: LengthBounds,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            group_size: 8,
            max_rounds: 3,
            max_resamples: 10,
            seed: 0,
            seeds: Vec::new(),
            decoding: Decoding::default(),
            acceptance: AcceptanceMode::Forced,
            length: LengthBounds::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.max_rounds == 0 || self.max_resamples == 0 || self.group_size == 0 {
            return Err(RolloutError::Config(
                "group size, round cap and resample budget must be at least 1".into(),
            ));
        }
        if !(self.decoding.temperature > 0.0)
            || !(self.decoding.top_p > 0.0 && self.decoding.top_p <= 1.0)
        {
            return Err(RolloutError::Config(
                "decoding settings out of range".into(),
            ));
        }
        self.length
            .validate()
            .map_err(|e| RolloutError::Config(e.to_string()))
    }

    pub fn trajectory_seed(&self, query_id: &str, index: usize) -> u64 {
        match self.seeds.get(index) {
            Some(&s) => s,
            None => derive_seed(self.seed, &[hash_str(query_id), index as u64]),
        }
    }
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("critic failed: {0}")]
    Critic(#[from] CriticError),
    #[error("renderer failed: {0}")]
    Renderer(#[from] RenderError),
    #[error(transparent)]
    Trajectory(#[from] TrajError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("invalid engine configuration: {0}")]
    Config(String),
}

impl RolloutError {
    /// Transport and process failures of the generator, critic or renderer.
    pub fn is_infrastructure(&self) -> bool {
        match self {
            RolloutError::Generator(_) => true,
            RolloutError::Critic(e) => matches!(e, CriticError::Transport(_)),
            RolloutError::Renderer(e) => !matches!(e, RenderError::InvalidRequest(_)),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    NoRequest,
    RoundCap,
    ResampleExhausted,
    /// The best score reached 1.0, so no candidate could improve on it.
    ScoreSaturated,
}

/// One sampled candidate, accepted or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttemptRecord {
    pub attempt: usize,
    /// Gated score.
    pub score: f64,
    pub valid: bool,
    pub accepted: bool,
    pub critic_called: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundLog {
    pub round: usize,
    pub attempts_used: usize,
    pub accepted: bool,
    pub attempts: Vec<AttemptRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutOutcome {
    pub seed: u64,
    pub trajectory: Trajectory,
    /// Gated score of every kept round, in order.
    pub gated_scores: Vec<f64>,
    pub best_score: f64,
    pub reward: RewardBreakdown,
    pub acceptance_log: Vec<RoundLog>,
    pub termination: Termination,
}

impl RolloutOutcome {
    pub fn generator_calls(&self) -> usize {
        self.acceptance_log.iter().map(|r| r.attempts_used).sum()
    }
}

struct Scored {
    candidate: CandidateRound,
    score: f64,
    feedback: String,
}

fn escape_tags(s: &str) -> String {
    s.replace('<', "&lt;")
}

fn score_attempt(
    ports: Ports<'_>,
    query: &Query,
    ctx: &AttemptContext,
    raw: &str,
    record: &mut AttemptRecord,
) -> Result<Scored, RolloutError> {
    let candidate = match parse_round(raw) {
        Ok(c) => c,
        Err(e) => {
            record.note = Some(format!("unparseable: {e}"));
            let candidate = CandidateRound {
                text: escape_tags(raw.trim()),
                code: None,
                requests_feedback: false,
            };
            return Ok(Scored {
                candidate,
                score: 0.0,
                feedback: String::new(),
            });
        }
    };
    let Some(code) = candidate.code.clone() else {
        record.note = Some("no code".into());
        return Ok(Scored {
            candidate,
            score: 0.0,
            feedback: String::new(),
        });
    };
    let render = ports.renderer.render(ctx, &code)?;
    if !render.is_valid() {
        let reason = serde_json::to_value(render.reason)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        record.note = Some(format!("render invalid: {reason}"));
        return Ok(Scored {
            candidate,
            score: 0.0,
            feedback: format!("render invalid: {reason}"),
        });
    }
    record.valid = true;
    record.critic_called = true;
    match ports.critic.critique(ctx, query, &code, &render.shots) {
        Ok(resp) => {
            let score = gate(resp.score, true)?;
            Ok(Scored {
                candidate,
                score,
                feedback: resp.feedback,
            })
        }
        Err(e) if e.is_parse_failure() => {
            record.note = Some(format!("critic output unreadable: {e}"));
            Ok(Scored {
                candidate,
                score: 0.0,
                feedback: "critic output unreadable".into(),
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// One rollout for `query` with the given trajectory seed.
pub fn run_trajectory(
    query: &Query,
    ports: Ports<'_>,
    config: &EngineConfig,
    trajectory_seed: u64,
) -> Result<RolloutOutcome, RolloutError> {
    config.validate()?;
    query.validate()?;
    let forced = config.acceptance == AcceptanceMode::Forced;
    let mut rounds: Vec<RoundBlock> = Vec::new();
    let mut gated = Vec::new();
    let mut log = Vec::new();
    let mut best = -1.0f64;
    let mut truncated = false;
    let mut termination = Termination::RoundCap;

    for round in 1..=config.max_rounds {
        let history = compose_history(query, &rounds);
        let mut attempts = Vec::new();
        let mut kept = None;
        for attempt in 1..=config.max_resamples {
            let ctx = AttemptContext {
                trajectory_seed,
                round,
                attempt,
            };
            let raw = ports.generator.generate(&ctx, &history, &config.decoding)?;
            let mut record = AttemptRecord {
                attempt,
                score: 0.0,
                valid: false,
                accepted: false,
                critic_called: false,
                note: None,
            };
            let scored = score_attempt(ports, query, &ctx, &raw, &mut record)?;
            record.score = scored.score;
            record.accepted = !forced || scored.score > best;
            let accepted = record.accepted;
            attempts.push(record);
            if accepted {
                kept = Some(scored);
                break;
            }
        }
        let attempts_used = attempts.len();
        let Some(Scored {
            candidate,
            score,
            feedback,
        }) = kept
        else {
            log.push(RoundLog {
                round,
                attempts_used,
                accepted: false,
                attempts,
            });
            termination = Termination::ResampleExhausted;
            break;
        };
        log.push(RoundLog {
            round,
            attempts_used,
            accepted: true,
            attempts,
        });
        best = best.max(score);
        gated.push(score);

        let scored_code = candidate.code.is_some();
        let mut block = RoundBlock {
            index: round,
            text: candidate.text,
            code: candidate.code,
            requested_feedback: candidate.requests_feedback,
            feedback: None,
            round_score: scored_code.then_some(score),
        };
        if !block.requested_feedback {
            rounds.push(block);
            termination = Termination::NoRequest;
            break;
        }
        if round == config.max_rounds {
            rounds.push(block);
            truncated = true;
            termination = Termination::RoundCap;
            break;
        }
        if forced && best >= 1.0 {
            rounds.push(block);
            truncated = true;
            termination = Termination::ScoreSaturated;
            break;
        }
        block.feedback = Some(feedback);
        rounds.push(block);
    }

    if rounds.is_empty() {
        // the first round always accepts in either mode, so this is unreachable
        return Err(TrajError::EmptyTrajectory.into());
    }
    let mut trajectory = Trajectory::new(query.id.clone(), rounds, truncated, &CharTokenizer)?;
    let reward = trajectory_reward(&trajectory, &gated, config.length)?;
    trajectory.final_reward = Some(reward.r_final);
    Ok(RolloutOutcome {
        seed: trajectory_seed,
        trajectory,
        gated_scores: gated,
        best_score: best.max(0.0),
        reward,
        acceptance_log: log,
        termination,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailedTrajectory {
    pub index: usize,
    pub seed: u64,
    pub reason: String,
    /// A port failed, as opposed to bad data or configuration.
    pub infrastructure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupOutcome {
    pub query_id: String,
    /// In trajectory order.
    pub outcomes: Vec<RolloutOutcome>,
    pub failures: Vec<FailedTrajectory>,
}

impl GroupOutcome {
    pub fn returns(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.reward.r_final).collect()
    }

    pub fn is_usable(&self) -> bool {
        self.outcomes.len() >= 2
    }

    /// Token-level view for the optimizer. Rejects groups with fewer than two
    /// successful trajectories.
    pub fn to_rollouts<F>(&self, encode: F) -> Result<GroupRollouts, GrpoError>
    where
        F: Fn(&Trajectory) -> TokenizedTrajectory,
    {
        let trajs = self
            .outcomes
            .iter()
            .map(|o| encode(&o.trajectory))
            .collect();
        GroupRollouts::new(self.query_id.clone(), trajs, self.returns())
    }
}

/// `group_size` independent rollouts with distinct seeds, run concurrently.
pub fn run_group(
    query: &Query,
    ports: Ports<'_>,
    config: &EngineConfig,
) -> Result<GroupOutcome, RolloutError> {
    config.validate()?;
    let results: Vec<(usize, u64, Result<RolloutOutcome, RolloutError>)> = (0..config.group_size)
        .into_par_iter()
        .map(|i| {
            let seed = config.trajectory_seed(&query.id, i);
            (i, seed, run_trajectory(query, ports, config, seed))
        })
        .collect();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (index, seed, r) in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push(FailedTrajectory {
                index,
                seed,
                reason: e.to_string(),
                infrastructure: e.is_infrastructure(),
            }),
        }
    }
    Ok(GroupOutcome {
        query_id: query.id.clone(),
        outcomes,
        failures,
    })
}

/// Self-edit loop without renderer or critic: a feedback request is answered
/// with an empty feedback block, up to `max_self_edits` rounds.
pub fn infer_critic_free(
    query: &Query,
    generator: &dyn GeneratorPort,
    max_self_edits: usize,
    decoding: &Decoding,
    seed: u64,
) -> Result<Trajectory, RolloutError> {
    query.validate()?;
    if max_self_edits == 0 {
        return Err(RolloutError::Config(
            "self-edit cap must be at least 1".into(),
        ));
    }
    let mut rounds: Vec<RoundBlock> = Vec::new();
    let mut truncated = false;
    for round in 1..=max_self_edits {
        let ctx = AttemptContext {
            trajectory_seed: seed,
            round,
            attempt: 1,
        };
        let raw = generator.generate(&ctx, &compose_history(query, &rounds), decoding)?;
        let c = parse_round(&raw).unwrap_or_else(|_| CandidateRound {
            text: escape_tags(raw.trim()),
            code: None,
            requests_feedback: false,
        });
        let mut block = RoundBlock {
            index: round,
            text: c.text,
            code: c.code,
            requested_feedback: c.requests_feedback,
            feedback: None,
            round_score: None,
        };
        let more = block.requested_feedback;
        if more && round < max_self_edits {
            block.feedback = Some(String::new());
        }
        rounds.push(block);
        if !more {
            break;
        }
        if round == max_self_edits {
            truncated = true;
        }
    }
    Ok(Trajectory::new(
        query.id.clone(),
        rounds,
        truncated,
        &CharTokenizer,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum InferenceMode {
    CriticFree { max_self_edits: usize },
    WithCritic,
}

/// Inference entry point shared by the CLI: critic-free mode only ever
/// touches the generator.
pub fn run_inference(
    query: &Query,
    ports: Ports<'_>,
    config: &EngineConfig,
    mode: &InferenceMode,
    seed: u64,
) -> Result<Trajectory, RolloutError> {
    match mode {
        InferenceMode::CriticFree { max_self_edits } => infer_critic_free(
            query,
            ports.generator,
            *max_self_edits,
            &config.decoding,
            seed,
        ),
        InferenceMode::WithCritic => {
            run_trajectory(query, ports, config, seed).map(|o| o.trajectory)
        }
    }
}
