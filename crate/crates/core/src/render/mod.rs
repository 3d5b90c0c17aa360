//! Rendering sandbox controller.
//!
//! A [`Renderer`] loads one self-contained document, captures three full-page
//! screenshots at fixed offsets and reports console errors, blocked network
//! requests and guard violations. Two renderers ship with the crate:
//!
//! * [`mock::MockRenderer`] - a deterministic software renderer used by tests
//!   and desk-scale experiments.
//! * [`cdp::CdpRenderer`] - drives a headless browser over the DevTools
//!   protocol; the websocket transport needs the `browser` feature.

pub mod cdp;
pub mod fixtures;
pub mod image;
pub mod mock;

use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::fixtures::{Fixture, FixtureManifest, FixtureStore, NetworkDecision, NetworkPolicy};
pub use self::image::Capture;
use crate::reward::{ScreenshotSet, CAPTURES_PER_ROUND};

/// First-party URL the document under test is served from.
pub const DOCUMENT_URL: &str = "http://sandbox.invalid/index.html";

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("browser launch failed: {0}")]
    LaunchFailure(String),
    #[error("devtools protocol error: {0}")]
    Protocol(String),
    #[error("invalid render request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why a render is (in)valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityReason {
    Ok,
    LoadFailed,
    Timeout,
    BlankCapture,
    GuardViolation,
}

/// In-page guard configuration, serialized into the injected script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardConfig {
    pub blocked_apis: Vec<String>,
    pub random_seed: u64,
    pub clock_epoch_ms: u64,
    pub allowed_origins: Vec<String>,
    pub ready_signal_name: String,
    pub violation_log_name: String,
    pub advance_fn_name: String,
    pub frames_per_second: u32,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            blocked_apis: [
                "window.open",
                "alert",
                "confirm",
                "prompt",
                "eval",
                "Function",
                "navigator.clipboard",
                "fetch",
                "XMLHttpRequest",
                "WebSocket",
                "Worker",
                "SharedWorker",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            random_seed: 0x5eed,
            clock_epoch_ms: 1_700_000_000_000,
            allowed_origins: vec![
                "http://sandbox.invalid".into(),
                "http://fixtures.invalid".into(),
            ],
            ready_signal_name: "__sandboxReady".into(),
            violation_log_name: "__sandboxViolations".into(),
            advance_fn_name: "__sandboxAdvance".into(),
            frames_per_second: 60,
        }
    }
}

impl GuardConfig {
    /// The script handed to the page pre-load hook: the serialized config
    /// followed by the guard implementation.
    pub fn injection_script(&self, guard_source: &str) -> String {
        let literal = serde_json::to_string(self).expect("guard config serializes");
        format!("window.__SANDBOX_GUARD_CONFIG__ = {literal};\n{guard_source}")
    }
}

#[derive(Debug, Clone)]
pub struct RenderRequest {
    pub code_bundle: String,
    pub timeout_ms: u64,
    pub capture_offsets_ms: [u64; 3],
    pub viewport_width: u32,
    pub max_height: u32,
    pub guard: Option<GuardConfig>,
    pub policy: NetworkPolicy,
}

impl RenderRequest {
    pub fn new(code_bundle: impl Into<String>) -> Self {
        RenderRequest {
            code_bundle: code_bundle.into(),
            timeout_ms: 10_000,
            capture_offsets_ms: [0, 1000, 2000],
            viewport_width: 1280,
            max_height: 16_384,
            guard: Some(GuardConfig::default()),
            policy: NetworkPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.timeout_ms == 0 {
            return Err(RenderError::InvalidRequest(
                "timeout must be positive".into(),
            ));
        }
        let o = self.capture_offsets_ms;
        if !(o[0] < o[1] && o[1] < o[2]) {
            return Err(RenderError::InvalidRequest(format!(
                "capture offsets {o:?} not strictly increasing"
            )));
        }
        if self.viewport_width == 0 || self.max_height == 0 {
            return Err(RenderError::InvalidRequest(
                "viewport dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RenderResult {
    pub shots: ScreenshotSet,
    pub page_width: u32,
    pub page_height: u32,
    pub background: [u8; 4],
    pub console_errors: Vec<String>,
    pub blocked_requests: Vec<String>,
    pub violations: Vec<String>,
    pub reason: ValidityReason,
    pub elapsed_ms: u64,
}

impl RenderResult {
    /// Assemble a result. Captures survive only when the run finished with
    /// `Ok` and all three were taken; otherwise they are dropped, so a result
    /// carries exactly 0 or 3 captures.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        captures: Vec<Capture>,
        offsets: [u64; 3],
        page: (u32, u32),
        background: [u8; 4],
        console_errors: Vec<String>,
        blocked_requests: Vec<String>,
        violations: Vec<String>,
        mut reason: ValidityReason,
        elapsed_ms: u64,
    ) -> Self {
        if reason == ValidityReason::Ok && captures.len() != CAPTURES_PER_ROUND {
            reason = ValidityReason::LoadFailed;
        }
        let captures = if reason == ValidityReason::Ok {
            captures
        } else {
            Vec::new()
        };
        let ok = reason == ValidityReason::Ok;
        RenderResult {
            shots: ScreenshotSet::new(captures, offsets.to_vec(), ok),
            page_width: page.0,
            page_height: page.1,
            background,
            console_errors,
            blocked_requests,
            violations,
            reason,
            elapsed_ms,
        }
    }

    pub fn failed(reason: ValidityReason, elapsed_ms: u64) -> Self {
        Self::assemble(
            Vec::new(),
            [0, 1000, 2000],
            (0, 0),
            [255; 4],
            Vec::new(),
            Vec::new(),
            Vec::new(),
            reason,
            elapsed_ms,
        )
    }

    pub fn is_valid(&self) -> bool {
        self.shots.valid
    }
}

/// Validity rules applied on top of what the renderer reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidityPolicy {
    /// Treat a set whose captures are all blank as invalid. Off in strict mode.
    pub blank_detection: bool,
    /// Fraction of background-colored pixels at which a capture is blank.
    pub blank_fraction: f64,
}

impl Default for ValidityPolicy {
    fn default() -> Self {
        ValidityPolicy {
            blank_detection: true,
            blank_fraction: 0.995,
        }
    }
}

/// Re-check a result: three captures, non-zero sizes, `Ok` reason and (with
/// blank detection on) at least one non-blank capture.
pub fn validity_check(result: &RenderResult, policy: &ValidityPolicy) -> (bool, ValidityReason) {
    if result.reason != ValidityReason::Ok {
        return (false, result.reason);
    }
    let caps = &result.shots.captures;
    if caps.len() != CAPTURES_PER_ROUND || caps.iter().any(|c| c.width == 0 || c.height == 0) {
        return (false, ValidityReason::LoadFailed);
    }
    if policy.blank_detection {
        let blank = caps.iter().all(|c| {
            c.is_blank(result.background, policy.blank_fraction)
                .unwrap_or(true)
        });
        if blank {
            return (false, ValidityReason::BlankCapture);
        }
    }
    (true, ValidityReason::Ok)
}

/// Apply [`validity_check`] and rewrite the result accordingly.
pub fn enforce_validity(mut result: RenderResult, policy: &ValidityPolicy) -> RenderResult {
    let (ok, reason) = validity_check(&result, policy);
    if !ok {
        result.reason = reason;
        result.shots =
            ScreenshotSet::new(Vec::new(), result.shots.capture_offsets_ms.clone(), false);
    }
    result
}

/// A sandboxed page renderer. Implementations own one browser context per
/// call and must return within `timeout_ms` plus capture overhead.
pub trait Renderer: Send + Sync {
    fn render_and_capture(&self, request: &RenderRequest) -> Result<RenderResult, RenderError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub deterministic: bool,
    /// Content hashes per run, one per capture offset.
    pub hashes: Vec<Vec<String>>,
}

/// Render the same request `runs` times and compare capture hashes.
pub fn determinism_probe(
    renderer: &dyn Renderer,
    request: &RenderRequest,
    runs: usize,
) -> Result<ProbeReport, RenderError> {
    let mut hashes = Vec::with_capacity(runs);
    let mut all_valid = true;
    for _ in 0..runs {
        let r = renderer.render_and_capture(request)?;
        all_valid &= r.is_valid();
        hashes.push(
            r.shots
                .captures
                .iter()
                .map(Capture::content_hash)
                .collect::<Vec<_>>(),
        );
    }
    let deterministic = all_valid && hashes.windows(2).all(|w| w[0] == w[1]);
    Ok(ProbeReport {
        deterministic,
        hashes,
    })
}

/// Writes `{root}/{trajectory}/{round}/S{1..3}.png`.
pub fn save_screenshots(
    root: &Path,
    trajectory: &str,
    round: usize,
    shots: &ScreenshotSet,
) -> std::io::Result<Vec<PathBuf>> {
    let dir = root.join(trajectory).join(round.to_string());
    std::fs::create_dir_all(&dir)?;
    shots
        .captures
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let p = dir.join(format!("S{}.png", i + 1));
            std::fs::write(&p, &c.png)?;
            Ok(p)
        })
        .collect()
}

/// Bounded pool of renderer contexts; each render borrows one exclusively.
pub struct RenderPool {
    contexts: Mutex<Vec<Box<dyn Renderer>>>,
    available: Condvar,
}

impl RenderPool {
    pub fn new(contexts: Vec<Box<dyn Renderer>>) -> Self {
        assert!(
            !contexts.is_empty(),
            "render pool needs at least one context"
        );
        RenderPool {
            contexts: Mutex::new(contexts),
            available: Condvar::new(),
        }
    }

    pub fn render(&self, request: &RenderRequest) -> Result<RenderResult, RenderError> {
        let ctx = {
            let mut guard = self.contexts.lock().unwrap();
            loop {
                if let Some(c) = guard.pop() {
                    break c;
                }
                guard = self.available.wait(guard).unwrap();
            }
        };
        let out = ctx.render_and_capture(request);
        self.contexts.lock().unwrap().push(ctx);
        self.available.notify_one();
        out
    }
}

impl Renderer for RenderPool {
    fn render_and_capture(&self, request: &RenderRequest) -> Result<RenderResult, RenderError> {
        self.render(request)
    }
}
