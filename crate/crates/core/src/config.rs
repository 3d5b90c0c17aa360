//! Run configuration: one TOML file, validated against the supported ranges.
//!
//! Endpoint and secret fields can be overridden from the environment; nothing
//! else is. Secrets are never written back out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::{HttpCriticConfig, MockScript, ScoreScale, DEFAULT_RUBRIC};
use crate::dedup::DedupConfig;
use crate::grpo::Hyper;
use crate::render::{FixtureStore, GuardConfig, NetworkPolicy, RenderRequest, ValidityPolicy};
use crate::reward::LengthBounds;
use crate::rollout::{
    AcceptanceMode, CollapseConfig, Decoding, DriftGenerator, EngineConfig, DEFAULT_SELF_EDIT_CAP,
};
use crate::train::TrainDemoConfig;

pub const ENV_CRITIC_ENDPOINT: &str = "RELOOK_CRITIC_ENDPOINT";
pub const ENV_CRITIC_API_KEY: &str = "RELOOK_CRITIC_API_KEY";
pub const ENV_GENERATOR_ENDPOINT: &str = "RELOOK_GENERATOR_ENDPOINT";
pub const ENV_GENERATOR_API_KEY: &str = "RELOOK_GENERATOR_API_KEY";

/// Upper limit of the resample budget.
pub const MAX_RESAMPLES: usize = 10;
pub const GAMMA_RANGE: (f64, f64) = (0.0, 0.3);
pub const BETA_RANGE: (f64, f64) = (0.0, 0.05);
pub const CLIP_BOUNDS: [f64; 3] = [1.0, 2.0, 3.0];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub group_size: usize,
    pub max_rounds: usize,
    pub max_resamples: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    pub temperature: f64,
    pub top_p: f64,
    pub acceptance: AcceptanceMode,
    /// Round cap of critic-free inference.
    pub self_edit_cap: usize,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        EngineSection {
            group_size: e.group_size,
            max_rounds: e.max_rounds,
            max_resamples: e.max_resamples,
            seed: e.seed,
            seeds: Vec::new(),
            temperature: e.decoding.temperature,
            top_p: e.decoding.top_p,
            acceptance: e.acceptance,
            self_edit_cap: DEFAULT_SELF_EDIT_CAP,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SandboxSection {
    pub timeout_ms: u64,
    pub capture_offsets_ms: [u64; 3],
    pub viewport_width: u32,
    pub max_height: u32,
    pub pool_size: usize,
    /// Install the in-page guard.
    pub guard: bool,
    pub blank_detection: bool,
    /// Headless browser binary; unset uses the built-in mock renderer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub browser_executable: Option<String>,
    /// Fixture manifest for allow-listed subresources.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    /// Built guard bundle (`sandbox-guard/dist/guard.js`). Without it the
    /// browser renderer injects a stub that only provides the page globals.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guard_script: Option<PathBuf>,
}

impl Default for SandboxSection {
    fn default() -> Self {
        let r = RenderRequest::new(String::new());
        SandboxSection {
            timeout_ms: r.timeout_ms,
            capture_offsets_ms: r.capture_offsets_ms,
            viewport_width: r.viewport_width,
            max_height: r.max_height,
            pool_size: 4,
            guard: true,
            blank_detection: ValidityPolicy::default().blank_detection,
            browser_executable: None,
            fixtures: None,
            guard_script: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticSection {
    /// Judge endpoint; when unset a scripted mock answers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub scale: ScoreScale,
    pub rubric: String,
    /// TOML or JSON file holding a mock script; wins over `mock`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
    pub mock: MockScript,
}

impl Default for CriticSection {
    fn default() -> Self {
        let h = HttpCriticConfig::default();
        CriticSection {
            endpoint: None,
            api_key: None,
            model: h.model,
            timeout_ms: h.timeout_ms,
            max_in_flight: h.max_in_flight,
            scale: h.scale,
            rubric: DEFAULT_RUBRIC.into(),
            mock_script: None,
            mock: MockScript::Stochastic {
                seed: 0,
                mean: 0.6,
                sd: 0.15,
                feedback: vec!["Tighten the layout and check the colours.".into()],
            },
        }
    }
}

impl CriticSection {
    pub fn http_config(&self, transcript: Option<PathBuf>) -> Option<HttpCriticConfig> {
        let endpoint = self.endpoint.clone()?;
        Some(HttpCriticConfig {
            endpoint,
            model: self.model.clone(),
            api_key: self.api_key.clone(),
            timeout_ms: self.timeout_ms,
            max_in_flight: self.max_in_flight,
            scale: self.scale,
            rubric: self.rubric.clone(),
            transcript,
        })
    }

    pub fn load_mock(&self) -> Result<MockScript, ConfigError> {
        let Some(path) = &self.mock_script else {
            return Ok(self.mock.clone());
        };
        let text = read(path)?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))
    }
}

/// Scripted stand-in for the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorMock {
    /// Fixed small pages; asks for feedback up to round `request_until`.
    Template { request_until: usize },
    /// Random-walk page quality.
    Drift {
        seed: u64,
        initial_mean: f64,
        initial_sd: f64,
        drift: f64,
        step_sd: f64,
    },
}

impl GeneratorMock {
    pub fn drift(g: DriftGenerator) -> Self {
        GeneratorMock::Drift {
            seed: g.seed,
            initial_mean: g.initial_mean,
            initial_sd: g.initial_sd,
            drift: g.drift,
            step_sd: g.step_sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub mock: GeneratorMock,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        GeneratorSection {
            endpoint: None,
            api_key: None,
            model: "policy".into(),
            timeout_ms: 120_000,
            max_in_flight: 8,
            mock: GeneratorMock::Template { request_until: 2 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollapseSection {
    pub rounds: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub max_resamples: usize,
    /// Judge noise of the scripted quality critic.
    pub noise_sd: f64,
    pub initial_mean: f64,
    pub initial_sd: f64,
    pub drift: f64,
    pub step_sd: f64,
}

impl Default for CollapseSection {
    fn default() -> Self {
        let c = CollapseConfig::default();
        let d = DriftGenerator::default();
        CollapseSection {
            rounds: c.rounds,
            seeds: c.seeds,
            base_seed: c.base_seed,
            max_resamples: c.max_resamples,
            noise_sd: 0.05,
            initial_mean: d.initial_mean,
            initial_sd: d.initial_sd,
            drift: d.drift,
            step_sd: d.step_sd,
        }
    }
}

impl CollapseSection {
    pub fn experiment(&self) -> CollapseConfig {
        CollapseConfig {
            rounds: self.rounds,
            seeds: self.seeds,
            base_seed: self.base_seed,
            max_resamples: self.max_resamples,
        }
    }

    pub fn generator(&self) -> DriftGenerator {
        DriftGenerator {
            seed: self.base_seed,
            initial_mean: self.initial_mean,
            initial_sd: self.initial_sd,
            drift: self.drift,
            step_sd: self.step_sd,
        }
    }

    pub fn critic(&self) -> MockScript {
        MockScript::Quality {
            seed: self.base_seed,
            noise_sd: self.noise_sd,
            feedback: vec!["Keep improving the page.".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub engine: EngineSection,
    pub reward: LengthBounds,
    pub optimizer: Hyper,
    pub sandbox: SandboxSection,
    pub critic: CriticSection,
    pub generator: GeneratorSection,
    pub dedup: DedupConfig,
    pub train: TrainDemoConfig,
    pub collapse: CollapseSection,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn in_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<(), ConfigError> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(invalid(format!("{name} = {v} outside [{lo}, {hi}]")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Parse, apply `key=value` overrides, then environment overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => read(p)?,
            None => String::new(),
        };
        let mut doc: toml::Table =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get(ENV_CRITIC_ENDPOINT) {
            self.critic.endpoint = Some(v);
        }
        if let Some(v) = get(ENV_CRITIC_API_KEY) {
            self.critic.api_key = Some(v);
        }
        if let Some(v) = get(ENV_GENERATOR_ENDPOINT) {
            self.generator.endpoint = Some(v);
        }
        if let Some(v) = get(ENV_GENERATOR_API_KEY) {
            self.generator.api_key = Some(v);
        }
    }

    /// TOML text without secrets.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.engine;
        if e.group_size < 2 {
            return Err(invalid("engine.group_size must be at least 2"));
        }
        if e.max_rounds == 0 || e.self_edit_cap == 0 {
            return Err(invalid(
                "engine.max_rounds and engine.self_edit_cap must be at least 1",
            ));
        }
        if !(1..=MAX_RESAMPLES).contains(&e.max_resamples) {
            return Err(invalid(format!(
                "engine.max_resamples = {} outside [1, {MAX_RESAMPLES}]",
                e.max_resamples
            )));
        }
        if !e.seeds.is_empty() && e.seeds.len() != e.group_size {
            return Err(invalid("engine.seeds must list one seed per group member"));
        }
        if !(e.temperature > 0.0 && e.temperature.is_finite()) {
            return Err(invalid("engine.temperature must be positive"));
        }
        if !(e.top_p > 0.0 && e.top_p <= 1.0) {
            return Err(invalid("engine.top_p must be in (0, 1]"));
        }
        self.reward
            .validate()
            .map_err(|e| invalid(format!("reward: {e}")))?;
        let h = &self.optimizer;
        h.validate()
            .map_err(|e| invalid(format!("optimizer: {e}")))?;
        in_range("optimizer.gamma", h.gamma, GAMMA_RANGE)?;
        in_range("optimizer.beta", h.beta, BETA_RANGE)?;
        if !CLIP_BOUNDS.contains(&h.clip_bound) {
            return Err(invalid(format!(
                "optimizer.clip_bound = {} not one of {CLIP_BOUNDS:?}",
                h.clip_bound
            )));
        }
        self.render_template()
            .validate()
            .map_err(|e| invalid(format!("sandbox: {e}")))?;
        if self.sandbox.pool_size == 0 {
            return Err(invalid("sandbox.pool_size must be at least 1"));
        }
        if self.critic.endpoint.is_some()
            && (self.critic.timeout_ms == 0 || self.critic.max_in_flight == 0)
        {
            return Err(invalid(
                "critic timeout and in-flight limit must be positive",
            ));
        }
        let t = &self.dedup.thresholds;
        for (name, v) in [
            ("lexical", t.lexical),
            ("dom", t.dom),
            ("code", t.code),
            ("fallback_low", t.fallback_low),
            ("tree_edit", t.tree_edit),
            ("review_low", t.review_low),
            ("review_dom_low", t.review_dom_low),
        ] {
            in_range(&format!("dedup.thresholds.{name}"), v, (0.0, 1.0))?;
        }
        if t.review_low > t.lexical || t.fallback_low > t.dom || t.review_dom_low > t.dom {
            return Err(invalid(
                "dedup bands must sit below their removal thresholds",
            ));
        }
        let c = &self.collapse;
        if c.rounds == 0 || c.seeds == 0 || !(1..=MAX_RESAMPLES).contains(&c.max_resamples) {
            return Err(invalid(
                "collapse rounds, seeds and resample budget out of range",
            ));
        }
        let tr = &self.train;
        if tr.steps == 0 || tr.group_size < 2 || tr.sample_len == 0 || !(tr.learning_rate > 0.0) {
            return Err(invalid(
                "train steps, group size, sample length and learning rate must be positive",
            ));
        }
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig {
        let e = &self.engine;
        EngineConfig {
            group_size: e.group_size,
            max_rounds: e.max_rounds,
            max_resamples: e.max_resamples,
            seed: e.seed,
            seeds: e.seeds.clone(),
            decoding: Decoding {
                temperature: e.temperature,
                top_p: e.top_p,
            },
            acceptance: e.acceptance,
            length: self.reward,
        }
    }

    pub fn render_template(&self) -> RenderRequest {
        let s = &self.sandbox;
        let mut r = RenderRequest::new(String::new());
        r.timeout_ms = s.timeout_ms;
        r.capture_offsets_ms = s.capture_offsets_ms;
        r.viewport_width = s.viewport_width;
        r.max_height = s.max_height;
        r.guard = s.guard.then(GuardConfig::default);
        r
    }

    pub fn validity(&self) -> ValidityPolicy {
        ValidityPolicy {
            blank_detection: self.sandbox.blank_detection,
            ..Default::default()
        }
    }

    pub fn network_policy(&self) -> Result<NetworkPolicy, ConfigError> {
        match &self.sandbox.fixtures {
            None => Ok(NetworkPolicy::default()),
            Some(p) => FixtureStore::load(p)
                .map(NetworkPolicy::new)
                .map_err(|e| invalid(format!("sandbox.fixtures: {e}"))),
        }
    }

    pub fn train_demo(&self) -> TrainDemoConfig {
        TrainDemoConfig {
            hyper: self.optimizer,
            ..self.train.clone()
        }
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, or as a bare string
/// when it is not one.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override {spec:?} is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut table = doc;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Parse(format!("override {key}: {p} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
