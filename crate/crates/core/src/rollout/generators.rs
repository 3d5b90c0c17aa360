//! Generator ports: closures, fixed templates, a drifting-quality simulator,
//! the toy policy, and a remote model endpoint.

use std::sync::Arc;
use std::time::Duration;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ports::{AttemptContext, Decoding, GeneratorError, GeneratorPort};
use crate::critic::{quality_marker, JsonEndpoint};
use crate::grpo::{CharVocab, ToyPolicy};
use crate::rng::{derive_seed, rng_for};
use crate::traj::{ANSWER_CLOSE, ANSWER_OPEN, FEEDBACK_REQUEST};

fn answer(body: &str, request_feedback: bool) -> String {
    let mut s = format!("{ANSWER_OPEN}{body}{ANSWER_CLOSE}");
    if request_feedback {
        s.push(' ');
        s.push_str(FEEDBACK_REQUEST);
    }
    s
}

type GenFn = Arc<dyn Fn(&AttemptContext, &str) -> String + Send + Sync>;

#[derive(Clone)]
pub struct FnGenerator(GenFn);

impl FnGenerator {
    pub fn new(f: impl Fn(&AttemptContext, &str) -> String + Send + Sync + 'static) -> Self {
        FnGenerator(Arc::new(f))
    }
}

impl GeneratorPort for FnGenerator {
    fn generate(
        &self,
        ctx: &AttemptContext,
        history: &str,
        _: &Decoding,
    ) -> Result<String, GeneratorError> {
        Ok((self.0)(ctx, history))
    }
}

/// A small page that names its round and attempt. Requests feedback while the
/// round is at most `request_until`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateGenerator {
    pub request_until: usize,
}

impl TemplateGenerator {
    pub fn always() -> Self {
        TemplateGenerator {
            request_until: usize::MAX,
        }
    }

    pub fn never() -> Self {
        TemplateGenerator { request_until: 0 }
    }
}

impl GeneratorPort for TemplateGenerator {
    fn generate(
        &self,
        ctx: &AttemptContext,
        _history: &str,
        _: &Decoding,
    ) -> Result<String, GeneratorError> {
        let body = format!(
            "<main><h1>Draft {}.{}</h1><p class=\"note\">variant {:x}</p><button>Start</button></main>",
            ctx.round,
            ctx.attempt,
            derive_seed(ctx.trajectory_seed, &[ctx.round as u64, ctx.attempt as u64]) & 0xffff
        );
        Ok(format!(
            "Revision {}.\n{}",
            ctx.round,
            answer(&body, ctx.round <= self.request_until)
        ))
    }
}

/// Simulated reviser whose page quality is a random walk: the first draft is
/// `N(initial_mean, initial_sd)` and every revision adds `N(drift, step_sd)`
/// to the last kept quality. The quality is written into the page as `q=`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftGenerator {
    pub seed: u64,
    pub initial_mean: f64,
    pub initial_sd: f64,
    pub drift: f64,
    pub step_sd: f64,
}

impl Default for DriftGenerator {
    fn default() -> Self {
        DriftGenerator {
            seed: 0,
            initial_mean: 0.5,
            initial_sd: 0.1,
            drift: -0.03,
            step_sd: 0.1,
        }
    }
}

impl GeneratorPort for DriftGenerator {
    fn generate(
        &self,
        ctx: &AttemptContext,
        history: &str,
        _: &Decoding,
    ) -> Result<String, GeneratorError> {
        let mut rng = rng_for(derive_seed(
            self.seed,
            &[ctx.trajectory_seed, ctx.round as u64, ctx.attempt as u64],
        ));
        let dist =
            |m: f64, s: f64| Normal::new(m, s.max(0.0)).map_err(|e| GeneratorError(e.to_string()));
        let q = match quality_marker(history) {
            Some(prev) => prev + dist(self.drift, self.step_sd)?.sample(&mut rng),
            None => dist(self.initial_mean, self.initial_sd)?.sample(&mut rng),
        };
        Ok(answer(
            &format!("<div>q={:.3}</div>", q.clamp(0.0, 1.0)),
            true,
        ))
    }
}

/// Samples a short paragraph from a [`ToyPolicy`], one character per token;
/// the shared "other" token is written as `.`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicyGenerator {
    pub policy: ToyPolicy,
    pub vocab: CharVocab,
    pub length: usize,
    pub request_until: usize,
}

impl ToyPolicyGenerator {
    pub const OTHER_CHAR: char = '.';

    pub fn sample_text(&self, seed: u64) -> String {
        let mut rng = rng_for(seed);
        // the paragraph follows `>`, which maps to the other token
        let mut ctx = self.vocab.other_id();
        let mut s = String::with_capacity(self.length);
        for _ in 0..self.length {
            let t = self.policy.sample_next(ctx, &mut rng);
            s.push(self.vocab.char_of(t).unwrap_or(Self::OTHER_CHAR));
            ctx = t;
        }
        s
    }
}

impl GeneratorPort for ToyPolicyGenerator {
    fn generate(
        &self,
        ctx: &AttemptContext,
        _history: &str,
        _: &Decoding,
    ) -> Result<String, GeneratorError> {
        let text = self.sample_text(derive_seed(
            ctx.trajectory_seed,
            &[ctx.round as u64, ctx.attempt as u64],
        ));
        Ok(answer(
            &format!("<p>{text}</p>"),
            ctx.round <= self.request_until,
        ))
    }
}

#[derive(Debug, Serialize)]
struct WireGenerate<'a> {
    id: String,
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    top_p: f64,
    seed: u64,
}

/// Remote policy behind a JSON endpoint answering `{"id", "output"}`.
pub struct HttpGenerator {
    pub model: String,
    endpoint: JsonEndpoint,
}

impl HttpGenerator {
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
        max_in_flight: usize,
    ) -> Self {
        HttpGenerator {
            model: model.into(),
            endpoint: JsonEndpoint::new(url, api_key, timeout, max_in_flight),
        }
    }
}

impl GeneratorPort for HttpGenerator {
    fn generate(
        &self,
        ctx: &AttemptContext,
        history: &str,
        decoding: &Decoding,
    ) -> Result<String, GeneratorError> {
        let seed = derive_seed(ctx.trajectory_seed, &[ctx.round as u64, ctx.attempt as u64]);
        let id = format!("gen-{}-{}-{}", ctx.trajectory_seed, ctx.round, ctx.attempt);
        let body = WireGenerate {
            id: id.clone(),
            model: &self.model,
            prompt: history,
            temperature: decoding.temperature,
            top_p: decoding.top_p,
            seed,
        };
        let v = self.endpoint.call(&id, &body).map_err(GeneratorError)?;
        v.get("output")
            .and_then(|o| o.as_str())
            .map(String::from)
            .ok_or_else(|| GeneratorError("response has no output".into()))
    }
}
