//! Trajectory data model and the reflection tag grammar.
//!
//! A rollout is a sequence of rounds. Each round holds the policy's free text,
//! the code extracted from its answer block, an optional feedback request and,
//! when requested, the critic's feedback wrapped in feedback tags:
//!
//! ```text
//! <text> <answer><code></answer> <get_feedback><mllm_feedback><feedback></mllm_feedback>
//! ```
//!
//! Policy-authored tokens and critic-authored tokens are told apart by
//! [`tag_origins`], which drives advantage masking in [`crate::grpo`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FEEDBACK_REQUEST: &str = "<get_feedback>";
pub const FEEDBACK_OPEN: &str = "<mllm_feedback>";
pub const FEEDBACK_CLOSE: &str = "</mllm_feedback>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// Rollout prompt. `{$query}` is replaced by the query text.
pub const PROMPT_TEMPLATE: &str = "Solve the following problem step by step.\n\
You now have the ability to selectively write executable HTML, CSS, JavaScript, or SVG code to receive feedback from the multimodal large model on the code.\n\
The code you provided will be executed, and the feedback (wrapped in '<mllm_feedback> output_str </mllm_feedback>') can be returned to aid your reasoning and help you arrive at the final answer.\n\
Unless you believe the current answer is flawless, please output <get_feedback> after providing the complete answer to receive feedback from the multimodal large model and improve the code based on the feedback.\n\
*user question:*\n\
{$query}";

/// Visual-output constraint appended to training prompts.
pub const VISUAL_OUTPUT_CONSTRAINT: &str = "Write complete, executable HTML/CSS/JavaScript/SVG code in a single document that renders in a browser.";

/// Answer-block constraint; tells the policy where its code must go.
pub const ANSWER_BLOCK_CONSTRAINT: &str =
    "Put the complete code inside one <answer></answer> block.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajError {
    #[error("malformed tags at byte {offset}: {reason}")]
    MalformedTags { offset: usize, reason: &'static str },
    #[error("trajectory has no rounds")]
    EmptyTrajectory,
    #[error("invalid trajectory: {0}")]
    Invalid(String),
}

/// A natural-language task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub constraints: Vec<String>,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, TrajError> {
        let q = Query {
            id: id.into(),
            text: text.into(),
            constraints: Vec::new(),
        };
        q.validate()?;
        Ok(q)
    }

    /// Query carrying the default visual-output and answer-block constraints.
    pub fn with_default_constraints(
        id: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<Self, TrajError> {
        let mut q = Self::new(id, text)?;
        q.constraints = vec![
            VISUAL_OUTPUT_CONSTRAINT.to_string(),
            ANSWER_BLOCK_CONSTRAINT.to_string(),
        ];
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), TrajError> {
        if self.text.trim().is_empty() {
            return Err(TrajError::Invalid(format!(
                "query {} has empty text",
                self.id
            )));
        }
        Ok(())
    }
}

/// Which author produced a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenOrigin {
    Policy,
    Critic,
}

/// Token counting abstraction. Only counts matter for rewards and masks.
pub trait Tokenizer: Send + Sync {
    fn count_tokens(&self, text: &str) -> usize;
}

/// One token per Unicode scalar value.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharTokenizer;

impl Tokenizer for CharTokenizer {
    fn count_tokens(&self, text: &str) -> usize {
        text.chars().count()
    }
}

/// One reflection round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundBlock {
    /// 1-based round number.
    pub index: usize,
    pub text: String,
    /// `None` when the round had no extractable code; such a round is invalid.
    pub code: Option<String>,
    pub requested_feedback: bool,
    pub feedback: Option<String>,
    pub round_score: Option<f64>,
}

impl RoundBlock {
    pub fn new(index: usize, text: impl Into<String>, code: impl Into<String>) -> Self {
        RoundBlock {
            index,
            text: text.into(),
            code: Some(code.into()),
            requested_feedback: false,
            feedback: None,
            round_score: None,
        }
    }

    pub fn with_feedback(mut self, feedback: impl Into<String>) -> Self {
        self.requested_feedback = true;
        self.feedback = Some(feedback.into());
        self
    }

    pub fn is_valid(&self) -> bool {
        self.code.is_some()
    }
}

/// A policy-authored candidate round before any critic interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRound {
    pub text: String,
    pub code: Option<String>,
    pub requests_feedback: bool,
}

/// A complete rollout for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub query_id: String,
    pub rounds: Vec<RoundBlock>,
    pub total_token_count: usize,
    pub final_reward: Option<f64>,
    /// Set when the loop stopped although the last round asked for feedback
    /// (round cap or saturated score); that round then carries no feedback.
    pub truncated: bool,
}

impl Trajectory {
    pub fn new(
        query_id: impl Into<String>,
        rounds: Vec<RoundBlock>,
        truncated: bool,
        tokenizer: &dyn Tokenizer,
    ) -> Result<Self, TrajError> {
        validate_rounds(&rounds, truncated)?;
        let total_token_count = serialize_segments(&rounds)
            .iter()
            .map(|(s, _)| tokenizer.count_tokens(s))
            .sum();
        Ok(Trajectory {
            query_id: query_id.into(),
            rounds,
            total_token_count,
            final_reward: None,
            truncated,
        })
    }

    /// Serialized output: every round's text, code and feedback, no prompt.
    pub fn output_text(&self) -> String {
        serialize_rounds(&self.rounds)
    }

    pub fn final_code(&self) -> Option<&str> {
        self.rounds.iter().rev().find_map(|r| r.code.as_deref())
    }

    pub fn round_scores(&self) -> Vec<f64> {
        self.rounds.iter().filter_map(|r| r.round_score).collect()
    }
}

fn validate_rounds(rounds: &[RoundBlock], truncated: bool) -> Result<(), TrajError> {
    if rounds.is_empty() {
        return Err(TrajError::EmptyTrajectory);
    }
    let last = rounds.len() - 1;
    for (i, r) in rounds.iter().enumerate() {
        if r.index != i + 1 {
            return Err(TrajError::Invalid(format!(
                "round {} has index {}",
                i + 1,
                r.index
            )));
        }
        if r.feedback.is_some() && !r.requested_feedback {
            return Err(TrajError::Invalid(format!(
                "round {} has feedback without a request",
                r.index
            )));
        }
        if let Some(s) = r.round_score {
            if r.code.is_none() {
                return Err(TrajError::Invalid(format!(
                    "round {} is scored but has no code",
                    r.index
                )));
            }
            if !(0.0..=1.0).contains(&s) {
                return Err(TrajError::Invalid(format!(
                    "round {} score {s} outside [0,1]",
                    r.index
                )));
            }
        }
        if i < last && r.feedback.is_none() {
            return Err(TrajError::Invalid(format!(
                "round {} is followed by another round but has no feedback",
                r.index
            )));
        }
    }
    let tail = &rounds[last];
    if tail.requested_feedback && tail.feedback.is_none() && !truncated {
        return Err(TrajError::Invalid(
            "last round requested feedback but none was attached and the loop was not truncated"
                .into(),
        ));
    }
    Ok(())
}

fn skip_ws(s: &str, mut pos: usize) -> usize {
    while let Some(c) = s[pos..].chars().next() {
        if !c.is_whitespace() {
            break;
        }
        pos += c.len_utf8();
    }
    pos
}

fn find_from(s: &str, pat: &str, from: usize) -> Option<usize> {
    s[from..].find(pat).map(|i| i + from)
}

fn non_empty(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Split rollout text (without the prompt) into rounds.
///
/// A trailing segment without an answer block becomes a round whose `code` is
/// `None`.
pub fn parse_rollout(raw: &str) -> Result<Vec<RoundBlock>, TrajError> {
    let mut rounds = Vec::new();
    let mut pos = 0;
    loop {
        pos = skip_ws(raw, pos);
        if pos >= raw.len() {
            break;
        }
        let index = rounds.len() + 1;
        let answer_at = find_from(raw, ANSWER_OPEN, pos);
        let text_end = answer_at.unwrap_or(raw.len());
        let text_region = &raw[pos..text_end];
        for (tag, reason) in [
            (ANSWER_CLOSE, "stray </answer>"),
            (
                FEEDBACK_OPEN,
                "feedback block without a preceding answer and request",
            ),
            (FEEDBACK_CLOSE, "stray </mllm_feedback>"),
        ] {
            if let Some(i) = text_region.find(tag) {
                return Err(TrajError::MalformedTags {
                    offset: pos + i,
                    reason,
                });
            }
        }
        let text = text_region.trim().to_string();
        let Some(answer_at) = answer_at else {
            rounds.push(RoundBlock {
                index,
                text,
                code: None,
                requested_feedback: false,
                feedback: None,
                round_score: None,
            });
            break;
        };
        let code_start = answer_at + ANSWER_OPEN.len();
        let code_end =
            find_from(raw, ANSWER_CLOSE, code_start).ok_or(TrajError::MalformedTags {
                offset: answer_at,
                reason: "unclosed <answer>",
            })?;
        if let Some(i) = raw[code_start..code_end].find(ANSWER_OPEN) {
            return Err(TrajError::MalformedTags {
                offset: code_start + i,
                reason: "nested <answer>",
            });
        }
        let code = non_empty(&raw[code_start..code_end]);
        pos = skip_ws(raw, code_end + ANSWER_CLOSE.len());

        let mut requested_feedback = false;
        let mut feedback = None;
        if raw[pos..].starts_with(FEEDBACK_REQUEST) {
            requested_feedback = true;
            pos = skip_ws(raw, pos + FEEDBACK_REQUEST.len());
            if raw[pos..].starts_with(FEEDBACK_OPEN) {
                let fb_start = pos + FEEDBACK_OPEN.len();
                let fb_end =
                    find_from(raw, FEEDBACK_CLOSE, fb_start).ok_or(TrajError::MalformedTags {
                        offset: pos,
                        reason: "unclosed <mllm_feedback>",
                    })?;
                if let Some(i) = raw[fb_start..fb_end].find(FEEDBACK_OPEN) {
                    return Err(TrajError::MalformedTags {
                        offset: fb_start + i,
                        reason: "nested <mllm_feedback>",
                    });
                }
                feedback = Some(raw[fb_start..fb_end].trim().to_string());
                pos = fb_end + FEEDBACK_CLOSE.len();
            }
        } else if raw[pos..].starts_with(FEEDBACK_OPEN) {
            return Err(TrajError::MalformedTags {
                offset: pos,
                reason: "feedback block without <get_feedback>",
            });
        }
        rounds.push(RoundBlock {
            index,
            text,
            code,
            requested_feedback,
            feedback,
            round_score: None,
        });
    }
    Ok(rounds)
}

/// Parse one generator turn. Text after the answer block is ignored except
/// for a feedback request.
pub fn parse_round(raw: &str) -> Result<CandidateRound, TrajError> {
    let Some(answer_at) = raw.find(ANSWER_OPEN) else {
        return Ok(CandidateRound {
            text: raw.trim().to_string(),
            code: None,
            requests_feedback: false,
        });
    };
    let code_start = answer_at + ANSWER_OPEN.len();
    let code_end = find_from(raw, ANSWER_CLOSE, code_start).ok_or(TrajError::MalformedTags {
        offset: answer_at,
        reason: "unclosed <answer>",
    })?;
    Ok(CandidateRound {
        text: raw[..answer_at].trim().to_string(),
        code: non_empty(&raw[code_start..code_end]),
        requests_feedback: raw[code_end..].contains(FEEDBACK_REQUEST),
    })
}

/// True iff a feedback request follows the (first) answer block.
pub fn requests_feedback(round_text: &str) -> bool {
    let Some(open) = round_text.find(ANSWER_OPEN) else {
        return false;
    };
    match find_from(round_text, ANSWER_CLOSE, open + ANSWER_OPEN.len()) {
        Some(close) => round_text[close..].contains(FEEDBACK_REQUEST),
        None => false,
    }
}

/// Serialized pieces of the output with their authors, in order.
pub fn serialize_segments(rounds: &[RoundBlock]) -> Vec<(String, TokenOrigin)> {
    let mut out: Vec<(String, TokenOrigin)> = Vec::new();
    let mut policy = String::new();
    for (i, r) in rounds.iter().enumerate() {
        if i > 0 {
            policy.push('\n');
        }
        policy.push_str(&r.text);
        if let Some(code) = &r.code {
            if !r.text.is_empty() {
                policy.push('\n');
            }
            policy.push_str(ANSWER_OPEN);
            policy.push_str(code);
            policy.push_str(ANSWER_CLOSE);
            if r.requested_feedback {
                policy.push(' ');
                policy.push_str(FEEDBACK_REQUEST);
            }
        }
        if let Some(fb) = &r.feedback {
            policy.push('\n');
            policy.push_str(FEEDBACK_OPEN);
            out.push((std::mem::take(&mut policy), TokenOrigin::Policy));
            out.push((fb.clone(), TokenOrigin::Critic));
            policy.push_str(FEEDBACK_CLOSE);
        }
    }
    if !policy.is_empty() {
        out.push((policy, TokenOrigin::Policy));
    }
    out
}

pub fn serialize_rounds(rounds: &[RoundBlock]) -> String {
    serialize_segments(rounds)
        .into_iter()
        .map(|(s, _)| s)
        .collect()
}

/// The rollout prompt for `query`, constraints appended after the question.
pub fn render_prompt(query: &Query) -> String {
    let mut body = query.text.clone();
    for c in &query.constraints {
        body.push('\n');
        body.push_str(c);
    }
    PROMPT_TEMPLATE.replace("{$query}", &body)
}

/// Prompt followed by every round so far, feedback wrapped in feedback tags.
pub fn compose_history(query: &Query, rounds: &[RoundBlock]) -> String {
    let prompt = render_prompt(query);
    if rounds.is_empty() {
        return prompt;
    }
    format!("{prompt}\n{}", serialize_rounds(rounds))
}

/// Per-token author tags; feedback contents are `Critic`, everything else
/// (including the feedback delimiters) is `Policy`.
pub fn tag_origins(trajectory: &Trajectory, tokenizer: &dyn Tokenizer) -> Vec<TokenOrigin> {
    let mut out = Vec::with_capacity(trajectory.total_token_count);
    for (seg, origin) in serialize_segments(&trajectory.rounds) {
        out.extend(std::iter::repeat_n(origin, tokenizer.count_tokens(&seg)));
    }
    out
}

/// Counts of policy and critic tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginSummary {
    pub policy_tokens: usize,
    pub critic_tokens: usize,
    pub total_tokens: usize,
}

impl OriginSummary {
    pub fn from_origins(origins: &[TokenOrigin]) -> Self {
        let critic_tokens = origins
            .iter()
            .filter(|o| **o == TokenOrigin::Critic)
            .count();
        OriginSummary {
            policy_tokens: origins.len() - critic_tokens,
            critic_tokens,
            total_tokens: origins.len(),
        }
    }
}
