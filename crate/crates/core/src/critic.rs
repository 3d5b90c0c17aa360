//! Judge requests, judge output parsing, and critics.
//!
//! [`HttpCritic`] talks to an external multimodal judge over a small JSON
//! protocol. [`MockCritic`] answers from a script and backs every test and
//! desk-scale experiment.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::{ScreenshotSet, CAPTURES_PER_ROUND};
use crate::rng::{derive_seed, hash_str, rng_for};
use crate::rollout::ports::{AttemptContext, CriticPort};
use crate::traj::Query;

pub const DEFAULT_RUBRIC: &str = "visual-score-v1";

pub const SCORE_OPEN: &str = "<score>";
pub const SCORE_CLOSE: &str = "</score>";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CriticError {
    #[error("expected {expected} screenshots, got {got}")]
    MissingScreenshot { expected: usize, got: usize },
    #[error("critic called for an invalid render")]
    InvalidShots,
    #[error("unknown rubric {0:?}")]
    UnknownRubric(String),
    #[error("unparseable judge output: {0}")]
    ParseFailure(String),
    #[error("mock script exhausted after {0} calls")]
    ScriptExhausted(usize),
    #[error("critic transport: {0}")]
    Transport(String),
}

impl CriticError {
    /// Parse failures cost the attempt (score 0); everything else aborts the
    /// trajectory.
    pub fn is_parse_failure(&self) -> bool {
        matches!(self, CriticError::ParseFailure(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RubricDimension {
    pub key: &'static str,
    pub description: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rubric {
    pub id: &'static str,
    pub dimensions: Vec<RubricDimension>,
}

pub fn rubric(id: &str) -> Result<Rubric, CriticError> {
    match id {
        DEFAULT_RUBRIC => Ok(Rubric {
            id: DEFAULT_RUBRIC,
            dimensions: vec![
                RubricDimension { key: "specification", description: "Does the page do what the request asks for?" },
                RubricDimension { key: "layout", description: "Are components placed, aligned and sized sensibly?" },
                RubricDimension { key: "typography_color", description: "Are fonts, spacing and colours consistent and legible?" },
                RubricDimension {
                    key: "interaction",
                    description: "Where the request asks for behaviour over time, do the three screenshots show it working?",
                },
            ],
        }),
        other => Err(CriticError::UnknownRubric(other.to_string())),
    }
}

/// Instructions sent to the judge. The output contract is the `<score>` block
/// followed by free-text advice.
pub const JUDGE_PROMPT: &str = "You are reviewing a web page generated from a user request.\n\
You receive the request, the page source and three screenshots taken right after load, one second later and two seconds later.\n\
Rate the page from 0 to 1 considering these dimensions:\n\
{dimensions}\n\
Reply with the score first, exactly as <score>0.00</score>, then give concrete, actionable suggestions for improving the page.\n\
\n\
Request:\n{query}\n\
\n\
Source:\n{code}\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticRequest {
    pub query: String,
    pub code: String,
    /// Base64 PNG payloads, in capture order.
    pub screenshots: Vec<String>,
    pub rubric: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticResponse {
    pub score: f64,
    pub feedback: String,
    pub raw: String,
}

pub fn build_request(
    query: &Query,
    code: &str,
    shots: &ScreenshotSet,
    rubric_id: &str,
) -> Result<CriticRequest, CriticError> {
    let rubric = rubric(rubric_id)?;
    if shots.captures.len() != CAPTURES_PER_ROUND {
        return Err(CriticError::MissingScreenshot {
            expected: CAPTURES_PER_ROUND,
            got: shots.captures.len(),
        });
    }
    if !shots.valid {
        return Err(CriticError::InvalidShots);
    }
    let dims: Vec<String> = rubric
        .dimensions
        .iter()
        .map(|d| format!("- {}: {}", d.key, d.description))
        .collect();
    let prompt = JUDGE_PROMPT
        .replace("{dimensions}", &dims.join("\n"))
        .replace("{query}", &query.text)
        .replace("{code}", code);
    Ok(CriticRequest {
        query: query.text.clone(),
        code: code.to_string(),
        screenshots: shots.captures.iter().map(|c| B64.encode(&c.png)).collect(),
        rubric: rubric.id.to_string(),
        prompt,
    })
}

/// Scale of the number inside the score block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    #[default]
    Unit,
    /// Judges reporting on [0,100]; divided by 100 here.
    Percent,
}

pub fn parse_response(raw: &str, scale: ScoreScale) -> Result<CriticResponse, CriticError> {
    let open = raw
        .find(SCORE_OPEN)
        .ok_or_else(|| CriticError::ParseFailure("no score block".into()))?;
    let start = open + SCORE_OPEN.len();
    let len = raw[start..]
        .find(SCORE_CLOSE)
        .ok_or_else(|| CriticError::ParseFailure("unclosed score block".into()))?;
    let text = raw[start..start + len].trim();
    let value: f64 = text
        .parse()
        .map_err(|_| CriticError::ParseFailure(format!("score {text:?} is not a number")))?;
    let score = match scale {
        ScoreScale::Unit => value,
        ScoreScale::Percent => value / 100.0,
    };
    if !score.is_finite() || !(0.0..=1.0).contains(&score) {
        return Err(CriticError::ParseFailure(format!(
            "score {value} out of range"
        )));
    }
    let feedback = format!(
        "{}{}",
        &raw[..open],
        &raw[start + len + SCORE_CLOSE.len()..]
    )
    .trim()
    .to_string();
    Ok(CriticResponse {
        score,
        feedback,
        raw: raw.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpCriticConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub scale: ScoreScale,
    pub rubric: String,
    #[serde(default)]
    pub transcript: Option<PathBuf>,
}

impl Default for HttpCriticConfig {
    fn default() -> Self {
        HttpCriticConfig {
            endpoint: String::new(),
            model: "judge".into(),
            api_key: None,
            timeout_ms: 60_000,
            max_in_flight: 4,
            scale: ScoreScale::Unit,
            rubric: DEFAULT_RUBRIC.into(),
            transcript: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    id: String,
    model: &'a str,
    prompt: &'a str,
    images: &'a [String],
    rubric: &'a str,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    id: String,
    output: String,
}

/// Blocking JSON-over-HTTP client shared by the remote ports: bounded
/// in-flight calls, id correlation, one retry on transport errors.
pub struct JsonEndpoint {
    pub url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    slots: Mutex<usize>,
    freed: Condvar,
    max_in_flight: usize,
}

impl JsonEndpoint {
    pub fn new(
        url: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
        max_in_flight: usize,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        JsonEndpoint {
            url: url.into(),
            api_key,
            agent,
            slots: Mutex::new(0),
            freed: Condvar::new(),
            max_in_flight: max_in_flight.max(1),
        }
    }

    fn once<B: Serialize>(&self, body: &B) -> Result<serde_json::Value, ureq::Error> {
        let mut req = self.agent.post(&self.url);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        req.send_json(body)?.body_mut().read_json()
    }

    /// POST `body`; the reply must echo `id`.
    pub fn call<B: Serialize>(&self, id: &str, body: &B) -> Result<serde_json::Value, String> {
        {
            let mut n = self.slots.lock().unwrap();
            while *n >= self.max_in_flight {
                n = self.freed.wait(n).unwrap();
            }
            *n += 1;
        }
        let mut out = self.once(body);
        if matches!(&out, Err(e) if !matches!(e, ureq::Error::StatusCode(400..=499))) {
            out = self.once(body);
        }
        *self.slots.lock().unwrap() -= 1;
        self.freed.notify_one();
        let v = out.map_err(|e| format!("{}: {e}", self.url))?;
        match v.get("id").and_then(|x| x.as_str()) {
            Some(got) if got == id => Ok(v),
            got => Err(format!("response id {got:?} does not match request {id}")),
        }
    }
}

pub struct HttpCritic {
    cfg: HttpCriticConfig,
    endpoint: JsonEndpoint,
    next_id: AtomicU64,
    transcript: Option<Mutex<File>>,
}

impl HttpCritic {
    pub fn new(cfg: HttpCriticConfig) -> Result<Self, CriticError> {
        rubric(&cfg.rubric)?;
        let endpoint = JsonEndpoint::new(
            cfg.endpoint.clone(),
            cfg.api_key.clone(),
            Duration::from_millis(cfg.timeout_ms),
            cfg.max_in_flight,
        );
        let transcript = match &cfg.transcript {
            Some(p) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| CriticError::Transport(e.to_string()))?,
            )),
            None => None,
        };
        Ok(HttpCritic {
            cfg,
            endpoint,
            next_id: AtomicU64::new(1),
            transcript,
        })
    }

    fn record(&self, entry: serde_json::Value) {
        if let Some(f) = &self.transcript {
            let mut f = f.lock().unwrap();
            let _ = writeln!(f, "{entry}");
        }
    }
}

impl CriticPort for HttpCritic {
    fn critique(
        &self,
        ctx: &AttemptContext,
        query: &Query,
        code: &str,
        shots: &ScreenshotSet,
    ) -> Result<CriticResponse, CriticError> {
        let req = build_request(query, code, shots, &self.cfg.rubric)?;
        let id = format!(
            "{}-{}-{}-{}",
            ctx.trajectory_seed,
            ctx.round,
            ctx.attempt,
            self.next_id.fetch_add(1, Ordering::SeqCst)
        );
        let wire = WireRequest {
            id: id.clone(),
            model: &self.cfg.model,
            prompt: &req.prompt,
            images: &req.screenshots,
            rubric: &req.rubric,
        };
        let reply = self
            .endpoint
            .call(&id, &wire)
            .map_err(CriticError::Transport)?;
        let reply: WireResponse =
            serde_json::from_value(reply).map_err(|e| CriticError::Transport(e.to_string()))?;
        let parsed = parse_response(&reply.output, self.cfg.scale);
        self.record(serde_json::json!({
            "id": reply.id,
            "query": query.id,
            "round": ctx.round,
            "attempt": ctx.attempt,
            "output": reply.output,
            "score": parsed.as_ref().ok().map(|r| r.score),
            "error": parsed.as_ref().err().map(|e| e.to_string()),
        }));
        parsed
    }
}

const DEFAULT_FEEDBACK: &[&str] = &[
    "The header overlaps the content; add spacing below it.",
    "Colours clash; use one accent colour for buttons and links.",
    "The main panel is not centred on wide screens.",
    "Nothing changes between the screenshots; the animation does not start.",
];

fn default_feedback() -> Vec<String> {
    DEFAULT_FEEDBACK.iter().map(|s| s.to_string()).collect()
}

pub type ScoreFn = Arc<dyn Fn(&AttemptContext, &str) -> f64 + Send + Sync>;

/// What a [`MockCritic`] answers.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MockScript {
    /// Scores returned in call order; running past the end is an error.
    Sequence {
        scores: Vec<f64>,
        #[serde(default = "default_feedback")]
        feedback: Vec<String>,
    },
    /// i.i.d. `N(mean, sd)` scores clamped to [0,1], seeded per attempt.
    Stochastic {
        seed: u64,
        mean: f64,
        sd: f64,
        #[serde(default = "default_feedback")]
        feedback: Vec<String>,
    },
    /// Partial credit for the visible text starting with `pattern`: the
    /// length of the matched prefix over the pattern length.
    Pattern {
        pattern: String,
        #[serde(default = "default_feedback")]
        feedback: Vec<String>,
    },
    /// Reads a quality marker `q=0.123` from the code and reports it, plus
    /// optional seeded judge noise.
    Quality {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        noise_sd: f64,
        #[serde(default = "default_feedback")]
        feedback: Vec<String>,
    },
    #[serde(skip)]
    Function(ScoreFn),
}

impl PartialEq for MockScript {
    fn eq(&self, other: &Self) -> bool {
        use MockScript::*;
        match (self, other) {
            (
                Sequence {
                    scores: a,
                    feedback: f,
                },
                Sequence {
                    scores: b,
                    feedback: g,
                },
            ) => a == b && f == g,
            (
                Stochastic {
                    seed: a,
                    mean: m,
                    sd: s,
                    feedback: f,
                },
                Stochastic {
                    seed: b,
                    mean: n,
                    sd: t,
                    feedback: g,
                },
            ) => a == b && m == n && s == t && f == g,
            (
                Pattern {
                    pattern: a,
                    feedback: f,
                },
                Pattern {
                    pattern: b,
                    feedback: g,
                },
            ) => a == b && f == g,
            (
                Quality {
                    seed: a,
                    noise_sd: n,
                    feedback: f,
                },
                Quality {
                    seed: b,
                    noise_sd: m,
                    feedback: g,
                },
            ) => a == b && n == m && f == g,
            (Function(a), Function(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl std::fmt::Debug for MockScript {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MockScript::Sequence { scores, .. } => write!(f, "Sequence({scores:?})"),
            MockScript::Stochastic { seed, mean, sd, .. } => {
                write!(f, "Stochastic(seed={seed}, mean={mean}, sd={sd})")
            }
            MockScript::Pattern { pattern, .. } => write!(f, "Pattern({pattern:?})"),
            MockScript::Quality { seed, noise_sd, .. } => {
                write!(f, "Quality(seed={seed}, noise_sd={noise_sd})")
            }
            MockScript::Function(_) => write!(f, "Function"),
        }
    }
}

/// Value of the last `q=<number>` marker in `code`.
pub fn quality_marker(code: &str) -> Option<f64> {
    let i = code.rfind("q=")?;
    let rest = &code[i + 2..];
    let end = rest
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .unwrap_or(rest.len());
    rest[..end].parse().ok()
}

/// Text content of a document with tags removed.
pub fn visible_text(code: &str) -> String {
    let dom = crate::html::parse(code);
    dom.preorder()
        .into_iter()
        .filter(|&i| !matches!(dom.nodes[i].tag.as_str(), "script" | "style" | "title"))
        .map(|i| dom.nodes[i].text.trim())
        .collect::<Vec<_>>()
        .join("")
}

pub struct MockCritic {
    script: MockScript,
    calls: Mutex<usize>,
}

impl MockCritic {
    pub fn new(script: MockScript) -> Self {
        MockCritic {
            script,
            calls: Mutex::new(0),
        }
    }

    pub fn sequence(scores: &[f64]) -> Self {
        Self::new(MockScript::Sequence {
            scores: scores.to_vec(),
            feedback: default_feedback(),
        })
    }

    pub fn function(f: impl Fn(&AttemptContext, &str) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(MockScript::Function(Arc::new(f)))
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }

    fn respond(score: f64, feedback: &[String], pick: usize) -> CriticResponse {
        let fb = if feedback.is_empty() {
            String::new()
        } else {
            feedback[pick % feedback.len()].clone()
        };
        let raw = format!("{SCORE_OPEN}{score}{SCORE_CLOSE}\n{fb}");
        CriticResponse {
            score,
            feedback: fb,
            raw,
        }
    }
}

impl CriticPort for MockCritic {
    fn critique(
        &self,
        ctx: &AttemptContext,
        _query: &Query,
        code: &str,
        shots: &ScreenshotSet,
    ) -> Result<CriticResponse, CriticError> {
        if shots.captures.len() != CAPTURES_PER_ROUND {
            return Err(CriticError::MissingScreenshot {
                expected: CAPTURES_PER_ROUND,
                got: shots.captures.len(),
            });
        }
        let n = {
            let mut c = self.calls.lock().unwrap();
            *c += 1;
            *c
        };
        let pick = ctx.round + ctx.attempt;
        let per_attempt = |seed: u64| {
            rng_for(derive_seed(
                seed,
                &[ctx.trajectory_seed, ctx.round as u64, ctx.attempt as u64],
            ))
        };
        let out = match &self.script {
            MockScript::Sequence { scores, feedback } => {
                let s = *scores
                    .get(n - 1)
                    .ok_or(CriticError::ScriptExhausted(scores.len()))?;
                Self::respond(s, feedback, n - 1)
            }
            MockScript::Stochastic {
                seed,
                mean,
                sd,
                feedback,
            } => {
                let d = Normal::new(*mean, sd.max(0.0))
                    .map_err(|e| CriticError::Transport(e.to_string()))?;
                let s = d.sample(&mut per_attempt(*seed)).clamp(0.0, 1.0);
                Self::respond(s, feedback, pick)
            }
            MockScript::Pattern { pattern, feedback } => {
                let text = visible_text(code);
                let matched = pattern
                    .chars()
                    .zip(text.chars())
                    .take_while(|(a, b)| a == b)
                    .count();
                let total = pattern.chars().count().max(1);
                Self::respond(matched as f64 / total as f64, feedback, pick)
            }
            MockScript::Quality {
                seed,
                noise_sd,
                feedback,
            } => {
                let q = quality_marker(code).unwrap_or(0.0);
                let noise = if *noise_sd > 0.0 {
                    Normal::new(0.0, *noise_sd)
                        .map(|d| d.sample(&mut per_attempt(*seed ^ hash_str(code))))
                        .unwrap_or(0.0)
                } else {
                    0.0
                };
                Self::respond((q + noise).clamp(0.0, 1.0), feedback, pick)
            }
            MockScript::Function(f) => {
                Self::respond(f(ctx, code).clamp(0.0, 1.0), &default_feedback(), pick)
            }
        };
        Ok(out)
    }
}
