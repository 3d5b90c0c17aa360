//! DevTools-protocol sandbox controller.
//!
//! One render = one fresh browser context. The controller installs the guard
//! before any page script runs, intercepts every request (fail-closed through
//! [`NetworkPolicy`]), waits for load and the guard's ready signal, then
//! advances virtual time between the three full-page captures.
//!
//! The transport is abstracted behind [`CdpTransport`] so the session logic is
//! testable without a browser; [`fake::FakeBrowser`] is the scripted stand-in.
//! The websocket transport and a process launcher live behind the `browser`
//! feature.

use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use super::{
    Capture, GuardConfig, NetworkDecision, RenderError, RenderRequest, RenderResult, Renderer,
    ValidityReason, DOCUMENT_URL,
};

/// Policy header sent with the document: no `unsafe-eval`, no plugins, no
/// form posts. Network egress is handled by interception, not by CSP.
pub const DOCUMENT_CSP: &str =
    "default-src * data: blob: 'unsafe-inline'; script-src * data: blob: 'unsafe-inline'; object-src 'none'; base-uri 'none'; form-action 'none'";

const INITIAL_VIEWPORT_HEIGHT: u32 = 800;

/// Fallback used when no guard bundle is configured. It only provides the
/// page globals the controller talks to; API blocking and the seeded clock
/// come from the real guard bundle.
pub const GUARD_STUB: &str = r#"(function () {
  var c = window.__SANDBOX_GUARD_CONFIG__;
  window[c.violation_log_name] = [];
  window[c.advance_fn_name] = function (ms) { return new Promise(function (r) { setTimeout(r, ms); }); };
  window[c.ready_signal_name] = true;
})();"#;

/// A bidirectional JSON message channel to the browser.
pub trait CdpTransport: Send {
    fn send(&mut self, message: &Value) -> Result<(), String>;
    /// Next message, or `Ok(None)` if nothing arrived within `timeout`.
    fn recv(&mut self, timeout: Duration) -> Result<Option<Value>, String>;
}

/// Opens a transport to a browser; failures here are launch failures.
pub trait CdpConnector: Send + Sync {
    fn connect(&self) -> Result<Box<dyn CdpTransport>, RenderError>;
}

impl<F> CdpConnector for F
where
    F: Fn() -> Result<Box<dyn CdpTransport>, RenderError> + Send + Sync,
{
    fn connect(&self) -> Result<Box<dyn CdpTransport>, RenderError> {
        self()
    }
}

pub struct CdpRenderer {
    connector: Box<dyn CdpConnector>,
    guard_source: String,
    /// Extra wall-clock budget for the capture phase on top of `timeout_ms`.
    pub capture_overhead_ms: u64,
}

impl CdpRenderer {
    pub fn new(connector: Box<dyn CdpConnector>) -> Self {
        CdpRenderer {
            connector,
            guard_source: GUARD_STUB.to_string(),
            capture_overhead_ms: 5_000,
        }
    }

    pub fn with_guard_source(mut self, source: impl Into<String>) -> Self {
        self.guard_source = source.into();
        self
    }
}

impl Renderer for CdpRenderer {
    fn render_and_capture(&self, req: &RenderRequest) -> Result<RenderResult, RenderError> {
        req.validate()?;
        let started = Instant::now();
        let transport = self.connector.connect()?;
        let mut s = Session::new(
            transport,
            req,
            started + Duration::from_millis(req.timeout_ms),
        );
        let outcome = s.run(
            &self.guard_source,
            started + Duration::from_millis(req.timeout_ms + self.capture_overhead_ms),
        );
        s.dispose();
        let elapsed = started.elapsed().as_millis() as u64;
        let (captures, page, background, violations, reason) = match outcome {
            Ok(done) => (
                done.captures,
                done.page,
                done.background,
                done.violations,
                ValidityReason::Ok,
            ),
            Err(Stop::Invalid(reason)) => (Vec::new(), (0, 0), [255; 4], Vec::new(), reason),
            Err(Stop::Timeout) => (
                Vec::new(),
                (0, 0),
                [255; 4],
                Vec::new(),
                ValidityReason::Timeout,
            ),
            Err(Stop::Crashed(why)) => {
                s.console_errors.push(format!("browser: {why}"));
                (
                    Vec::new(),
                    (0, 0),
                    [255; 4],
                    Vec::new(),
                    ValidityReason::LoadFailed,
                )
            }
            Err(Stop::Protocol(e)) => return Err(RenderError::Protocol(e)),
        };
        Ok(RenderResult::assemble(
            captures,
            req.capture_offsets_ms,
            page,
            background,
            s.console_errors,
            s.blocked,
            violations,
            reason,
            elapsed,
        ))
    }
}

#[derive(Debug)]
enum Stop {
    Timeout,
    Crashed(String),
    Invalid(ValidityReason),
    Protocol(String),
}

struct Completed {
    captures: Vec<Capture>,
    page: (u32, u32),
    background: [u8; 4],
    violations: Vec<String>,
}

struct Session<'a> {
    t: Box<dyn CdpTransport>,
    req: &'a RenderRequest,
    next_id: u64,
    session_id: Option<String>,
    context_id: Option<String>,
    deadline: Instant,
    loaded: bool,
    console_errors: Vec<String>,
    blocked: Vec<String>,
}

impl<'a> Session<'a> {
    fn new(t: Box<dyn CdpTransport>, req: &'a RenderRequest, deadline: Instant) -> Self {
        Session {
            t,
            req,
            next_id: 1,
            session_id: None,
            context_id: None,
            deadline,
            loaded: false,
            console_errors: Vec::new(),
            blocked: Vec::new(),
        }
    }

    fn envelope(&mut self, method: &str, params: Value) -> (u64, Value) {
        let id = self.next_id;
        self.next_id += 1;
        let mut msg = json!({ "id": id, "method": method, "params": params });
        if let Some(sid) = &self.session_id {
            if !method.starts_with("Target.") {
                msg["sessionId"] = json!(sid);
            }
        }
        (id, msg)
    }

    /// Fire-and-forget; the response is skipped when it arrives.
    fn notify(&mut self, method: &str, params: Value) -> Result<(), Stop> {
        let (_, msg) = self.envelope(method, params);
        self.t.send(&msg).map_err(Stop::Crashed)
    }

    fn call(&mut self, method: &str, params: Value) -> Result<Value, Stop> {
        let (id, msg) = self.envelope(method, params);
        self.t.send(&msg).map_err(Stop::Crashed)?;
        loop {
            let m = self.next_message()?;
            if m.get("id").and_then(Value::as_u64) == Some(id) {
                if let Some(err) = m.get("error") {
                    return Err(Stop::Protocol(format!("{method}: {err}")));
                }
                return Ok(m.get("result").cloned().unwrap_or(Value::Null));
            }
            if m.get("method").is_some() {
                self.on_event(&m)?;
            }
        }
    }

    fn next_message(&mut self) -> Result<Value, Stop> {
        loop {
            let now = Instant::now();
            if now >= self.deadline {
                return Err(Stop::Timeout);
            }
            if let Some(m) = self.t.recv(self.deadline - now).map_err(Stop::Crashed)? {
                return Ok(m);
            }
        }
    }

    fn on_event(&mut self, m: &Value) -> Result<(), Stop> {
        let p = &m["params"];
        match m["method"].as_str().unwrap_or("") {
            "Fetch.requestPaused" => self.on_request(p)?,
            "Page.loadEventFired" => self.loaded = true,
            "Runtime.exceptionThrown" => {
                let d = &p["exceptionDetails"];
                let text = d["exception"]["description"]
                    .as_str()
                    .or_else(|| d["text"].as_str())
                    .unwrap_or("exception");
                self.console_errors.push(text.to_string());
            }
            "Runtime.consoleAPICalled" if p["type"] == "error" => {
                let text: Vec<String> = p["args"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|a| {
                        a["value"]
                            .as_str()
                            .map(str::to_string)
                            .unwrap_or_else(|| a["description"].to_string())
                    })
                    .collect();
                self.console_errors.push(text.join(" "));
            }
            "Inspector.targetCrashed" | "Target.targetCrashed" => {
                return Err(Stop::Crashed("target crashed".into()))
            }
            _ => {}
        }
        Ok(())
    }

    fn on_request(&mut self, p: &Value) -> Result<(), Stop> {
        let id = p["requestId"].clone();
        let url = p["request"]["url"].as_str().unwrap_or("");
        match self.req.policy.decide(url) {
            NetworkDecision::Document => self.notify(
                "Fetch.fulfillRequest",
                json!({
                    "requestId": id,
                    "responseCode": 200,
                    "responseHeaders": [
                        { "name": "Content-Type", "value": "text/html; charset=utf-8" },
                        { "name": "Content-Security-Policy", "value": DOCUMENT_CSP },
                    ],
                    "body": B64.encode(self.req.code_bundle.as_bytes()),
                }),
            ),
            NetworkDecision::Inline => {
                self.notify("Fetch.continueRequest", json!({ "requestId": id }))
            }
            NetworkDecision::Fixture(f) => self.notify(
                "Fetch.fulfillRequest",
                json!({
                    "requestId": id,
                    "responseCode": 200,
                    "responseHeaders": [{ "name": "Content-Type", "value": f.content_type }],
                    "body": B64.encode(&f.bytes),
                }),
            ),
            NetworkDecision::Block(origin) => {
                if !self.blocked.contains(&origin) {
                    self.blocked.push(origin);
                }
                self.notify(
                    "Fetch.failRequest",
                    json!({ "requestId": id, "errorReason": "BlockedByClient" }),
                )
            }
        }
    }

    fn evaluate(&mut self, expression: &str, await_promise: bool) -> Result<Value, Stop> {
        let r = self.call(
            "Runtime.evaluate",
            json!({ "expression": expression, "returnByValue": true, "awaitPromise": await_promise }),
        )?;
        if r.get("exceptionDetails").is_some() {
            return Err(Stop::Invalid(ValidityReason::GuardViolation));
        }
        Ok(r["result"]["value"].clone())
    }

    fn set_viewport(&mut self, height: u32) -> Result<(), Stop> {
        self.call(
            "Emulation.setDeviceMetricsOverride",
            json!({ "width": self.req.viewport_width, "height": height, "deviceScaleFactor": 1, "mobile": false }),
        )
        .map(drop)
    }

    fn run(&mut self, guard_source: &str, capture_deadline: Instant) -> Result<Completed, Stop> {
        let r = self.call(
            "Target.createBrowserContext",
            json!({ "disposeOnDetach": true }),
        )?;
        self.context_id = r["browserContextId"].as_str().map(str::to_string);
        let r = self.call(
            "Target.createTarget",
            json!({ "url": "about:blank", "browserContextId": self.context_id }),
        )?;
        let target = r["targetId"].clone();
        let r = self.call(
            "Target.attachToTarget",
            json!({ "targetId": target, "flatten": true }),
        )?;
        self.session_id = r["sessionId"].as_str().map(str::to_string);
        if self.session_id.is_none() {
            return Err(Stop::Protocol("attachToTarget returned no session".into()));
        }
        self.call("Page.enable", json!({}))?;
        self.call("Runtime.enable", json!({}))?;
        if let Some(g) = &self.req.guard {
            let source = g.injection_script(guard_source);
            self.call(
                "Page.addScriptToEvaluateOnNewDocument",
                json!({ "source": source }),
            )?;
        }
        self.call(
            "Fetch.enable",
            json!({ "patterns": [{ "urlPattern": "*" }] }),
        )?;
        self.set_viewport(INITIAL_VIEWPORT_HEIGHT)?;
        let nav = self.call("Page.navigate", json!({ "url": DOCUMENT_URL }))?;
        if nav
            .get("errorText")
            .and_then(Value::as_str)
            .is_some_and(|e| !e.is_empty())
        {
            return Err(Stop::Invalid(ValidityReason::LoadFailed));
        }
        while !self.loaded {
            let m = self.next_message()?;
            if m.get("method").is_some() {
                self.on_event(&m)?;
            }
        }

        let guard = self.req.guard.clone();
        if let Some(g) = &guard {
            self.wait_ready(g)?;
        }
        self.deadline = capture_deadline;

        let mut captures = Vec::with_capacity(3);
        let mut page = (self.req.viewport_width, 0);
        let mut now_ms = 0;
        for offset in self.req.capture_offsets_ms {
            let delta = offset - now_ms;
            if delta > 0 {
                match &guard {
                    Some(g) => {
                        self.evaluate(&format!("window.{}({delta})", g.advance_fn_name), true)?;
                    }
                    None => std::thread::sleep(Duration::from_millis(delta)),
                }
            }
            now_ms = offset;
            let (cap, h) = self.capture()?;
            page.1 = page.1.max(h);
            captures.push(cap);
        }

        let violations = match &guard {
            Some(g) => self.read_violations(g)?,
            None => Vec::new(),
        };
        let bg = self.evaluate(
            "getComputedStyle(document.body || document.documentElement).backgroundColor",
            false,
        )?;
        let background = bg
            .as_str()
            .and_then(parse_css_color)
            .unwrap_or([255, 255, 255, 255]);
        Ok(Completed {
            captures,
            page,
            background,
            violations,
        })
    }

    fn wait_ready(&mut self, g: &GuardConfig) -> Result<(), Stop> {
        let probe = format!(
            "(function(){{var v = window.{}; return v === undefined ? 'missing' : (v ? 'ready' : 'pending');}})()",
            g.ready_signal_name
        );
        loop {
            match self.evaluate(&probe, false)?.as_str() {
                Some("ready") => return Ok(()),
                Some("missing") => return Err(Stop::Invalid(ValidityReason::LoadFailed)),
                _ => {
                    if Instant::now() >= self.deadline {
                        return Err(Stop::Timeout);
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
            }
        }
    }

    fn capture(&mut self) -> Result<(Capture, u32), Stop> {
        let m = self.call("Page.getLayoutMetrics", json!({}))?;
        let size = if m["cssContentSize"].is_object() {
            &m["cssContentSize"]
        } else {
            &m["contentSize"]
        };
        let h = size["height"]
            .as_f64()
            .unwrap_or(f64::from(INITIAL_VIEWPORT_HEIGHT))
            .ceil()
            .max(1.0) as u32;
        let h = h.min(self.req.max_height);
        self.set_viewport(h)?;
        let r = self.call(
            "Page.captureScreenshot",
            json!({ "format": "png", "captureBeyondViewport": true }),
        )?;
        let data = r["data"]
            .as_str()
            .ok_or_else(|| Stop::Protocol("captureScreenshot returned no data".into()))?;
        let bytes = B64
            .decode(data)
            .map_err(|e| Stop::Protocol(format!("screenshot base64: {e}")))?;
        let cap = Capture::from_png(bytes)
            .map_err(|e| Stop::Crashed(format!("undecodable screenshot: {e}")))?;
        Ok((cap, h))
    }

    /// A log that cannot be read back means the page tampered with the guard.
    fn read_violations(&mut self, g: &GuardConfig) -> Result<Vec<String>, Stop> {
        let v = self.evaluate(
            &format!("JSON.stringify(window.{})", g.violation_log_name),
            false,
        )?;
        let parsed: Option<Vec<Value>> = v.as_str().and_then(|s| serde_json::from_str(s).ok());
        let entries = parsed.ok_or(Stop::Invalid(ValidityReason::GuardViolation))?;
        Ok(entries
            .into_iter()
            .map(|e| match e {
                Value::String(s) => s,
                other => other.to_string(),
            })
            .collect())
    }

    fn dispose(&mut self) {
        if let Some(ctx) = self.context_id.take() {
            self.deadline = Instant::now() + Duration::from_millis(500);
            self.session_id = None;
            let _ = self.call(
                "Target.disposeBrowserContext",
                json!({ "browserContextId": ctx }),
            );
        }
    }
}

/// Parse `rgb(r, g, b)` / `rgba(r, g, b, a)` as reported by computed style.
/// A fully transparent body falls back to the canvas default (white).
pub fn parse_css_color(s: &str) -> Option<[u8; 4]> {
    let inner = s
        .trim()
        .strip_prefix("rgba(")
        .or_else(|| s.trim().strip_prefix("rgb("))?
        .strip_suffix(')')?;
    let parts: Vec<f64> = inner
        .split(',')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<_>>()?;
    let c = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    match parts.as_slice() {
        [r, g, b] => Some([c(*r), c(*g), c(*b), 255]),
        [_, _, _, a] if *a == 0.0 => Some([255, 255, 255, 255]),
        [r, g, b, a] => Some([c(*r), c(*g), c(*b), c(a * 255.0)]),
        _ => None,
    }
}

#[cfg(feature = "browser")]
pub mod ws {
    //! Websocket transport and a headless-browser launcher.

    use std::io::{BufRead, BufReader};
    use std::net::TcpStream;
    use std::process::{Child, Command, Stdio};
    use std::sync::Mutex;
    use std::time::Duration;

    use serde_json::Value;
    use tungstenite::stream::MaybeTlsStream;
    use tungstenite::{Message, WebSocket};

    use super::{CdpConnector, CdpTransport};
    use crate::render::RenderError;

    pub struct WsTransport {
        ws: WebSocket<MaybeTlsStream<TcpStream>>,
    }

    impl WsTransport {
        pub fn connect(url: &str) -> Result<Self, RenderError> {
            let (ws, _) = tungstenite::connect(url)
                .map_err(|e| RenderError::LaunchFailure(format!("{url}: {e}")))?;
            Ok(WsTransport { ws })
        }
    }

    impl CdpTransport for WsTransport {
        fn send(&mut self, message: &Value) -> Result<(), String> {
            self.ws
                .send(Message::text(message.to_string()))
                .map_err(|e| e.to_string())
        }

        fn recv(&mut self, timeout: Duration) -> Result<Option<Value>, String> {
            if let MaybeTlsStream::Plain(s) = self.ws.get_mut() {
                s.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))
                    .map_err(|e| e.to_string())?;
            }
            match self.ws.read() {
                Ok(Message::Text(t)) => serde_json::from_str(t.as_str())
                    .map(Some)
                    .map_err(|e| e.to_string()),
                Ok(Message::Close(_)) => Err("connection closed".into()),
                Ok(_) => Ok(None),
                Err(tungstenite::Error::Io(e))
                    if matches!(
                        e.kind(),
                        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                    ) =>
                {
                    Ok(None)
                }
                Err(e) => Err(e.to_string()),
            }
        }
    }

    /// Connects to an already running browser's websocket endpoint.
    pub struct WsConnector {
        pub url: String,
    }

    impl CdpConnector for WsConnector {
        fn connect(&self) -> Result<Box<dyn CdpTransport>, RenderError> {
            Ok(Box::new(WsTransport::connect(&self.url)?))
        }
    }

    /// Spawns a headless browser with an ephemeral debugging port and
    /// connects to it. The process is killed on drop.
    pub struct BrowserProcess {
        child: Mutex<Child>,
        pub ws_url: String,
    }

    impl BrowserProcess {
        pub fn launch(executable: &str, extra_args: &[String]) -> Result<Self, RenderError> {
            let profile =
                std::env::temp_dir().join(format!("relook-profile-{}", std::process::id()));
            let mut child = Command::new(executable)
                .args([
                    "--headless=new",
                    "--remote-debugging-port=0",
                    "--no-first-run",
                    "--no-default-browser-check",
                    "--disable-gpu",
                    "--disable-extensions",
                    "--disable-background-networking",
                    "--disable-sync",
                    "--hide-scrollbars",
                    "--mute-audio",
                ])
                .arg(format!("--user-data-dir={}", profile.display()))
                .args(extra_args)
                .stdout(Stdio::null())
                .stderr(Stdio::piped())
                .spawn()
                .map_err(|e| RenderError::LaunchFailure(format!("{executable}: {e}")))?;
            let stderr = child.stderr.take().expect("piped stderr");
            let mut ws_url = None;
            for line in BufReader::new(stderr).lines() {
                let line = line?;
                if let Some(u) = line.strip_prefix("DevTools listening on ") {
                    ws_url = Some(u.trim().to_string());
                    break;
                }
            }
            match ws_url {
                Some(ws_url) => Ok(BrowserProcess {
                    child: Mutex::new(child),
                    ws_url,
                }),
                None => {
                    let _ = child.kill();
                    Err(RenderError::LaunchFailure(format!(
                        "{executable} exited before announcing a debugging endpoint"
                    )))
                }
            }
        }
    }

    impl CdpConnector for BrowserProcess {
        fn connect(&self) -> Result<Box<dyn CdpTransport>, RenderError> {
            Ok(Box::new(WsTransport::connect(&self.ws_url)?))
        }
    }

    impl Drop for BrowserProcess {
        fn drop(&mut self) {
            if let Ok(mut c) = self.child.lock() {
                let _ = c.kill();
                let _ = c.wait();
            }
        }
    }
}

pub mod fake {
    //! Scripted browser for exercising the controller without a real one.
    //!
    //! It answers the commands the controller issues, pauses the document
    //! and each listed subresource through the interception hook, and only
    //! fires `Page.loadEventFired` once every paused request was resolved.
    //! Requests the controller lets through with `Fetch.continueRequest` are
    //! really fetched over TCP, so a canary server sees any egress.

    use std::collections::VecDeque;
    use std::io::Write;
    use std::net::TcpStream;
    use std::sync::{Arc, Mutex};
    use std::time::Duration;

    use base64::Engine;
    use serde_json::{json, Value};

    use super::{CdpTransport, B64};
    use crate::render::{Capture, DOCUMENT_URL};

    #[derive(Debug, Clone)]
    pub struct FakePage {
        pub subresources: Vec<String>,
        pub exceptions: Vec<String>,
        pub content_height: u32,
        /// Capture colour as a function of virtual time (ms).
        pub frame_color: fn(u64) -> [u8; 4],
        pub background: String,
        /// Never fire the load event.
        pub hang: bool,
        /// Drop the connection after this many screenshots.
        pub crash_after_captures: Option<usize>,
        /// Replace the violation log with a non-array (the page clobbered it).
        pub tamper_violation_log: bool,
        /// Entries the guard logs during the run.
        pub violations: Vec<String>,
    }

    impl Default for FakePage {
        fn default() -> Self {
            FakePage {
                subresources: Vec::new(),
                exceptions: Vec::new(),
                content_height: 1200,
                frame_color: |_| [40, 80, 160, 255],
                background: "rgb(255, 255, 255)".into(),
                hang: false,
                crash_after_captures: None,
                tamper_violation_log: false,
                violations: Vec::new(),
            }
        }
    }

    /// What the browser observed; shared with the test after the run.
    #[derive(Debug, Default, Clone)]
    pub struct FakeLog {
        pub commands: Vec<Value>,
        pub injected_scripts: Vec<String>,
        pub document_headers: Vec<Value>,
        pub document_body: Option<String>,
        pub fetched_upstream: Vec<String>,
        pub failed: Vec<String>,
        pub fulfilled: Vec<String>,
        pub viewport_heights: Vec<u64>,
        pub contexts_disposed: usize,
    }

    pub struct FakeBrowser {
        page: FakePage,
        log: Arc<Mutex<FakeLog>>,
        outbox: VecDeque<Value>,
        pending: Vec<(String, String)>,
        guard_installed: bool,
        clock_ms: u64,
        captures: usize,
        loaded: bool,
        next_rid: usize,
    }

    impl FakeBrowser {
        pub fn new(page: FakePage) -> (Self, Arc<Mutex<FakeLog>>) {
            let log = Arc::new(Mutex::new(FakeLog::default()));
            let b = FakeBrowser {
                page,
                log: log.clone(),
                outbox: VecDeque::new(),
                pending: Vec::new(),
                guard_installed: false,
                clock_ms: 0,
                captures: 0,
                loaded: false,
                next_rid: 0,
            };
            (b, log)
        }

        fn reply(&mut self, id: &Value, result: Value) {
            self.outbox.push_back(json!({ "id": id, "result": result }));
        }

        fn event(&mut self, method: &str, params: Value) {
            self.outbox
                .push_back(json!({ "method": method, "params": params, "sessionId": "S1" }));
        }

        fn pause(&mut self, url: &str) {
            let rid = format!("R{}", self.next_rid);
            self.next_rid += 1;
            self.pending.push((rid.clone(), url.to_string()));
            self.event(
                "Fetch.requestPaused",
                json!({ "requestId": rid, "request": { "url": url, "method": "GET" } }),
            );
        }

        fn resolve(&mut self, rid: &str) -> Option<String> {
            let i = self.pending.iter().position(|(r, _)| r == rid)?;
            let (_, url) = self.pending.remove(i);
            if url == DOCUMENT_URL {
                for u in self.page.subresources.clone() {
                    self.pause(&u);
                }
            }
            if self.pending.is_empty() && !self.loaded && !self.page.hang {
                self.loaded = true;
                for e in self.page.exceptions.clone() {
                    self.event(
                        "Runtime.exceptionThrown",
                        json!({ "exceptionDetails": { "text": "Uncaught", "exception": { "description": e } } }),
                    );
                }
                self.event("Page.loadEventFired", json!({ "timestamp": 1.0 }));
            }
            Some(url)
        }

        fn evaluate(&mut self, expr: &str) -> Value {
            let value = if expr.contains("__sandboxReady") {
                json!(if self.guard_installed {
                    "ready"
                } else {
                    "missing"
                })
            } else if let Some(i) = expr.find("__sandboxAdvance(") {
                let rest = &expr[i + "__sandboxAdvance(".len()..];
                let ms: u64 = rest[..rest.find(')').unwrap_or(0)].parse().unwrap_or(0);
                self.clock_ms += ms;
                Value::Null
            } else if expr.contains("__sandboxViolations") {
                if self.page.tamper_violation_log {
                    json!("\"gone\"")
                } else {
                    json!(serde_json::to_string(&self.page.violations).unwrap())
                }
            } else if expr.contains("getComputedStyle") {
                json!(self.page.background)
            } else {
                Value::Null
            };
            json!({ "result": { "type": "string", "value": value } })
        }
    }

    impl CdpTransport for FakeBrowser {
        fn send(&mut self, msg: &Value) -> Result<(), String> {
            self.log.lock().unwrap().commands.push(msg.clone());
            let id = msg["id"].clone();
            let p = &msg["params"];
            match msg["method"].as_str().unwrap_or("") {
                "Target.createBrowserContext" => {
                    self.reply(&id, json!({ "browserContextId": "C1" }))
                }
                "Target.createTarget" => self.reply(&id, json!({ "targetId": "T1" })),
                "Target.attachToTarget" => self.reply(&id, json!({ "sessionId": "S1" })),
                "Target.disposeBrowserContext" => {
                    self.log.lock().unwrap().contexts_disposed += 1;
                    self.reply(&id, json!({}));
                }
                "Page.addScriptToEvaluateOnNewDocument" => {
                    let src = p["source"].as_str().unwrap_or("").to_string();
                    self.guard_installed = src.contains("__SANDBOX_GUARD_CONFIG__");
                    self.log.lock().unwrap().injected_scripts.push(src);
                    self.reply(&id, json!({ "identifier": "1" }));
                }
                "Emulation.setDeviceMetricsOverride" => {
                    self.log
                        .lock()
                        .unwrap()
                        .viewport_heights
                        .push(p["height"].as_u64().unwrap_or(0));
                    self.reply(&id, json!({}));
                }
                "Page.navigate" => {
                    self.reply(&id, json!({ "frameId": "F1" }));
                    if p["url"] == DOCUMENT_URL {
                        self.pause(DOCUMENT_URL);
                    }
                }
                "Fetch.fulfillRequest" => {
                    let rid = p["requestId"].as_str().unwrap_or("").to_string();
                    if let Some(url) = self.resolve(&rid) {
                        let mut log = self.log.lock().unwrap();
                        if url == DOCUMENT_URL {
                            log.document_headers =
                                p["responseHeaders"].as_array().cloned().unwrap_or_default();
                            let body = B64
                                .decode(p["body"].as_str().unwrap_or(""))
                                .unwrap_or_default();
                            log.document_body = Some(String::from_utf8_lossy(&body).into_owned());
                        }
                        log.fulfilled.push(url);
                    }
                    self.reply(&id, json!({}));
                }
                "Fetch.continueRequest" => {
                    let rid = p["requestId"].as_str().unwrap_or("").to_string();
                    if let Some(url) = self.resolve(&rid) {
                        if let Some(hostport) = url
                            .strip_prefix("http://")
                            .map(|r| r.split('/').next().unwrap_or(""))
                        {
                            if let Ok(mut s) = TcpStream::connect_timeout(
                                &hostport
                                    .parse()
                                    .unwrap_or_else(|_| "127.0.0.1:9".parse().unwrap()),
                                Duration::from_millis(200),
                            ) {
                                let _ = write!(s, "GET / HTTP/1.0\r\n\r\n");
                            }
                        }
                        self.log.lock().unwrap().fetched_upstream.push(url);
                    }
                    self.reply(&id, json!({}));
                }
                "Fetch.failRequest" => {
                    let rid = p["requestId"].as_str().unwrap_or("").to_string();
                    if let Some(url) = self.resolve(&rid) {
                        self.log.lock().unwrap().failed.push(url);
                    }
                    self.reply(&id, json!({}));
                }
                "Runtime.evaluate" => {
                    let r = self.evaluate(p["expression"].as_str().unwrap_or(""));
                    self.reply(&id, r);
                }
                "Page.getLayoutMetrics" => {
                    let h = self.page.content_height;
                    self.reply(
                        &id,
                        json!({ "cssContentSize": { "x": 0, "y": 0, "width": 1280, "height": h } }),
                    );
                }
                "Page.captureScreenshot" => {
                    if self.page.crash_after_captures == Some(self.captures) {
                        return Err("websocket closed".into());
                    }
                    self.captures += 1;
                    let c = Capture::solid(8, 8, (self.page.frame_color)(self.clock_ms));
                    self.reply(&id, json!({ "data": B64.encode(&c.png) }));
                }
                _ => self.reply(&id, json!({})),
            }
            Ok(())
        }

        fn recv(&mut self, timeout: Duration) -> Result<Option<Value>, String> {
            match self.outbox.pop_front() {
                Some(m) => Ok(Some(m)),
                None => {
                    std::thread::sleep(timeout.min(Duration::from_millis(5)));
                    Ok(None)
                }
            }
        }
    }
}
