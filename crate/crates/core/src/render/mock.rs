//! Deterministic software renderer.
//!
//! Lays every visible element out as one horizontal band whose colour is a
//! hash of its tag, class and text, which is enough for blankness, temporal
//! change and determinism checks without a browser. It also emulates what the
//! in-page guard does to the page:
//!
//! * dialogs become no-ops, `eval`/`Function` throw, both are logged;
//! * script-visible time and randomness come from the guard seed and the
//!   capture offset, so animated pages are reproducible. Without a guard they
//!   draw from the wall clock, which is the negative control for
//!   [`super::determinism_probe`].
//!
//! Failure modes can be forced with HTML comments:
//! `<!-- sandbox:load-fail -->`, `<!-- sandbox:crash-after=N -->`,
//! `<!-- sandbox:guard-tamper -->`, `<!-- sandbox:launch-failure -->`.
//! A script containing `while(true)` or `for(;;)` never finishes loading.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use super::{
    Capture, NetworkDecision, RenderError, RenderRequest, RenderResult, Renderer, ValidityReason,
};
use crate::html::{self, Dom, Token};
use crate::rng::{derive_seed, hash_str, mix64};

const HIDDEN: &[&str] = &[
    "head", "script", "style", "meta", "link", "title", "template", "noscript", "base",
];
const RESOURCE_ATTRS: &[&str] = &["src", "href", "data", "poster"];
/// Elements that draw nothing once their resource is blocked.
const REPLACED: &[&str] = &["img", "iframe", "video", "audio", "embed", "object"];
const LOGICAL_ROW_PX: u32 = 24;
const LOAD_MS: u64 = 50;

#[derive(Debug, Clone)]
pub struct MockRenderer {
    /// Width of the produced captures; page geometry is scaled down to it.
    pub canvas_width: u32,
}

impl Default for MockRenderer {
    fn default() -> Self {
        MockRenderer { canvas_width: 96 }
    }
}

#[derive(Debug, Default)]
struct Directives {
    load_fail: bool,
    crash_after: Option<usize>,
    guard_tamper: bool,
    launch_failure: bool,
}

fn directives(code: &str) -> Directives {
    let (tokens, _) = html::tokenize(code);
    let mut d = Directives::default();
    for t in tokens {
        if let Token::Comment(c) = t {
            let c = c.trim();
            match c.strip_prefix("sandbox:") {
                Some("load-fail") => d.load_fail = true,
                Some("guard-tamper") => d.guard_tamper = true,
                Some("launch-failure") => d.launch_failure = true,
                Some(other) => {
                    if let Some(n) = other.strip_prefix("crash-after=") {
                        d.crash_after = n.trim().parse().ok();
                    }
                }
                None => {}
            }
        }
    }
    d
}

fn script_text(dom: &Dom) -> String {
    dom.nodes
        .iter()
        .filter(|e| e.tag == "script")
        .map(|e| e.text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

fn quoted_arg_after(src: &str, call: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = src;
    while let Some(i) = rest.find(call) {
        let after = rest[i + call.len()..].trim_start();
        if let Some(q) = after
            .chars()
            .next()
            .filter(|c| matches!(c, '"' | '\'' | '`'))
        {
            if let Some(end) = after[1..].find(q) {
                out.push(after[1..1 + end].to_string());
            }
        }
        rest = &rest[i + call.len()..];
    }
    out
}

/// Second quoted argument of every `.open(method, url)` call.
fn xhr_urls(src: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (i, _) in src.match_indices(".open(") {
        if src[..i].ends_with("window") {
            continue;
        }
        let args = &src[i + 6..];
        let end = args.find(')').unwrap_or(args.len());
        let quoted: Vec<&str> = args[..end]
            .split(['"', '\'', '`'])
            .skip(1)
            .step_by(2)
            .collect();
        if let Some(url) = quoted.get(1) {
            out.push(url.to_string());
        }
    }
    out
}

fn css_urls(src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = src;
    while let Some(i) = rest.find("url(") {
        let after = &rest[i + 4..];
        if let Some(end) = after.find(')') {
            out.push(after[..end].trim().trim_matches(['"', '\'']).to_string());
        }
        rest = &rest[i + 4..];
    }
    out
}

fn parse_hex_color(s: &str) -> Option<[u8; 4]> {
    let s = s.trim().trim_end_matches(';').trim();
    let hex = s.strip_prefix('#')?;
    let hex = hex.get(
        ..hex
            .find(|c: char| !c.is_ascii_hexdigit())
            .unwrap_or(hex.len()),
    )?;
    let v = |i: usize, n: usize| u8::from_str_radix(&hex[i..i + n], 16).ok();
    match hex.len() {
        6 => Some([v(0, 2)?, v(2, 2)?, v(4, 2)?, 255]),
        3 => Some([v(0, 1)? * 17, v(1, 1)? * 17, v(2, 1)? * 17, 255]),
        _ => None,
    }
}

fn background_from_decls(decls: &str) -> Option<[u8; 4]> {
    for decl in decls.split(';') {
        let mut kv = decl.splitn(2, ':');
        let (k, v) = (kv.next()?.trim(), kv.next().unwrap_or("").trim());
        if k == "background" || k == "background-color" {
            if let Some(c) = parse_hex_color(v) {
                return Some(c);
            }
        }
    }
    None
}

fn page_background(dom: &Dom) -> [u8; 4] {
    if let Some(body) = dom.nodes.iter().find(|e| e.tag == "body") {
        if let Some(c) = body.attr("style").and_then(background_from_decls) {
            return c;
        }
    }
    for style in dom.nodes.iter().filter(|e| e.tag == "style") {
        if let Some(i) = style.text.find("body") {
            let rest = &style.text[i..];
            if let (Some(o), Some(c)) = (rest.find('{'), rest.find('}')) {
                if o < c {
                    if let Some(bg) = background_from_decls(&rest[o + 1..c]) {
                        return bg;
                    }
                }
            }
        }
    }
    [255, 255, 255, 255]
}

fn visible_elements(dom: &Dom) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut stack = vec![(0usize, 0usize)];
    while let Some((i, depth)) = stack.pop() {
        let e = &dom.nodes[i];
        if i != 0 {
            if HIDDEN.contains(&e.tag.as_str()) {
                continue;
            }
            if !matches!(e.tag.as_str(), "html" | "body") {
                out.push((i, depth));
            }
        }
        for &c in e.children.iter().rev() {
            stack.push((c, depth + 1));
        }
    }
    out
}

impl MockRenderer {
    fn draw(
        &self,
        dom: &Dom,
        rows: &[(usize, usize)],
        bg: [u8; 4],
        page_h: u32,
        req: &RenderRequest,
        entropy: Option<u64>,
    ) -> Capture {
        let w = self.canvas_width.max(8);
        let row_h = ((LOGICAL_ROW_PX * w) / req.viewport_width).max(2);
        let scaled = ((u64::from(page_h) * u64::from(w)) / u64::from(req.viewport_width)) as u32;
        let h = scaled
            .max(4 + rows.len() as u32 * row_h)
            .min(req.max_height);
        let mut px: Vec<u8> = bg
            .iter()
            .copied()
            .cycle()
            .take(w as usize * h as usize * 4)
            .collect();
        for (k, &(node, depth)) in rows.iter().enumerate() {
            let e = &dom.nodes[node];
            let mut seed = hash_str(&e.tag)
                ^ hash_str(e.attr("class").unwrap_or("")).rotate_left(17)
                ^ hash_str(e.text.trim()).rotate_left(31);
            if let Some(x) = entropy {
                seed = mix64(seed ^ x);
            }
            let mut color = [
                (seed >> 8) as u8,
                (seed >> 24) as u8,
                (seed >> 40) as u8,
                255,
            ];
            if color == bg {
                color[0] ^= 0x80;
            }
            let y0 = 2 + k as u32 * row_h;
            let x0 = (2 + depth as u32 * 2).min(w / 2);
            let text_len = e.text.trim().chars().count() as u32;
            let x1 = (x0 + w / 4 + text_len.min(w)).min(w - 1);
            for y in y0..(y0 + row_h - 1).min(h) {
                for x in x0..x1 {
                    let o = (y as usize * w as usize + x as usize) * 4;
                    px[o..o + 4].copy_from_slice(&color);
                }
            }
        }
        Capture::from_rgba(w, h, &px).expect("mock capture encodes")
    }
}

impl Renderer for MockRenderer {
    fn render_and_capture(&self, req: &RenderRequest) -> Result<RenderResult, RenderError> {
        req.validate()?;
        let started = Instant::now();
        let d = directives(&req.code_bundle);
        if d.launch_failure {
            return Err(RenderError::LaunchFailure(
                "mock launch failure requested".into(),
            ));
        }
        let dom = html::parse(&req.code_bundle);
        let scripts = script_text(&dom);
        let guarded = req.guard.is_some();

        let mut console_errors = Vec::new();
        let mut blocked = Vec::new();
        let mut violations = Vec::new();
        let block = |origin: String, blocked: &mut Vec<String>| {
            if !blocked.contains(&origin) {
                blocked.push(origin);
            }
        };

        // Subresources referenced by markup and styles.
        let mut urls: Vec<(usize, String)> = Vec::new();
        for (i, e) in dom.nodes.iter().enumerate().skip(1) {
            for a in RESOURCE_ATTRS {
                if let Some(v) = e.attr(a) {
                    if v.contains("://") || v.starts_with("//") || v.starts_with("data:") {
                        urls.push((
                            i,
                            if v.starts_with("//") {
                                format!("https:{v}")
                            } else {
                                v.to_string()
                            },
                        ));
                    }
                }
            }
            if e.tag == "style" {
                urls.extend(css_urls(&e.text).into_iter().map(|u| (i, u)));
            }
            if let Some(s) = e.attr("style") {
                urls.extend(css_urls(s).into_iter().map(|u| (i, u)));
            }
        }
        let mut broken = Vec::new();
        for (i, u) in &urls {
            if let NetworkDecision::Block(origin) = req.policy.decide(u) {
                block(origin, &mut blocked);
                if REPLACED.contains(&dom.nodes[*i].tag.as_str()) {
                    broken.push(*i);
                }
            }
        }

        // Network-capable script APIs.
        let mut script_urls = quoted_arg_after(&scripts, "fetch(");
        script_urls.extend(quoted_arg_after(&scripts, "new WebSocket("));
        if scripts.contains("XMLHttpRequest") {
            script_urls.extend(xhr_urls(&scripts));
        }
        for u in script_urls.iter().filter(|u| u.contains("://")) {
            if let NetworkDecision::Block(origin) = req.policy.decide(u) {
                if guarded {
                    violations.push(format!("network:{origin}"));
                }
                block(origin, &mut blocked);
            }
        }

        let calls = |pat: &str| scripts.matches(pat).count();
        let dialogs = calls("alert(") + calls("confirm(") + calls("prompt(");
        if guarded {
            for (pat, name) in [
                ("window.open(", "window.open"),
                ("alert(", "alert"),
                ("confirm(", "confirm"),
                ("prompt(", "prompt"),
                ("navigator.clipboard", "navigator.clipboard"),
            ] {
                violations.extend(std::iter::repeat_n(format!("api:{name}"), calls(pat)));
            }
            for (pat, name) in [("eval(", "eval"), ("new Function(", "Function")] {
                for _ in 0..calls(pat) {
                    violations.push(format!("api:{name}"));
                    console_errors.push(format!("EvalError: {name} is blocked in the sandbox"));
                }
            }
        }

        let offsets = req.capture_offsets_ms;
        let elapsed = |virtual_ms: u64| virtual_ms.max(started.elapsed().as_millis() as u64);
        let hangs = ["while(true)", "while (true)", "for(;;)", "for (;;)"]
            .iter()
            .any(|p| scripts.contains(p))
            || (!guarded && dialogs > 0);
        if hangs || LOAD_MS + offsets[2] > req.timeout_ms {
            return Ok(RenderResult::failed(
                ValidityReason::Timeout,
                elapsed(req.timeout_ms),
            ));
        }
        if d.load_fail {
            return Ok(RenderResult::failed(
                ValidityReason::LoadFailed,
                elapsed(LOAD_MS),
            ));
        }
        if d.guard_tamper && guarded {
            return Ok(RenderResult::failed(
                ValidityReason::GuardViolation,
                elapsed(LOAD_MS),
            ));
        }

        let bg = page_background(&dom);
        let rows: Vec<(usize, usize)> = visible_elements(&dom)
            .into_iter()
            .filter(|(i, _)| !broken.contains(i))
            .collect();
        let page_h = (rows.len() as u32 * LOGICAL_ROW_PX + 16).min(req.max_height);
        let dynamic = [
            "Math.random",
            "Date.now",
            "performance.now",
            "new Date",
            "requestAnimationFrame",
            "setInterval",
            "setTimeout",
        ]
        .iter()
        .any(|p| scripts.contains(p));
        let wall_clock_reads = ["Math.random", "Date.now", "performance.now", "new Date"]
            .iter()
            .any(|p| scripts.contains(p));

        let mut captures = Vec::new();
        for (k, &offset) in offsets.iter().enumerate() {
            if d.crash_after == Some(k) {
                return Ok(RenderResult::failed(
                    ValidityReason::LoadFailed,
                    elapsed(LOAD_MS + offset),
                ));
            }
            let entropy = match (&req.guard, dynamic) {
                (_, false) => None,
                (Some(g), true) => Some(derive_seed(g.random_seed, &[g.clock_epoch_ms + offset])),
                (None, true) if wall_clock_reads => Some(
                    SystemTime::now()
                        .duration_since(UNIX_EPOCH)
                        .map(|d| d.as_nanos() as u64)
                        .unwrap_or(0)
                        ^ k as u64,
                ),
                (None, true) => Some(derive_seed(0, &[offset])),
            };
            captures.push(self.draw(&dom, &rows, bg, page_h, req, entropy));
        }
        Ok(RenderResult::assemble(
            captures,
            offsets,
            (req.viewport_width, page_h),
            bg,
            console_errors,
            blocked,
            violations,
            ValidityReason::Ok,
            elapsed(LOAD_MS + offsets[2]),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{determinism_probe, enforce_validity, validity_check, ValidityPolicy};

    fn render(code: &str) -> RenderResult {
        MockRenderer::default()
            .render_and_capture(&RenderRequest::new(code))
            .unwrap()
    }

    #[test]
    fn hello_page_is_static_and_valid() {
        let r = render("<html><body><h1>hello</h1></body></html>");
        assert_eq!(r.reason, ValidityReason::Ok);
        assert_eq!(r.shots.captures.len(), 3);
        let h: Vec<_> = r.shots.captures.iter().map(Capture::content_hash).collect();
        assert!(h[0] == h[1] && h[1] == h[2]);
        assert_eq!(
            validity_check(&r, &ValidityPolicy::default()),
            (true, ValidityReason::Ok)
        );
    }

    #[test]
    fn infinite_loop_times_out() {
        let r = render("<body><p>x</p><script>while(true){}</script></body>");
        assert_eq!(r.reason, ValidityReason::Timeout);
        assert!(r.shots.captures.is_empty());
        assert!(!r.is_valid());
    }

    #[test]
    fn timeout_shorter_than_schedule() {
        let mut req = RenderRequest::new("<p>x</p>");
        req.timeout_ms = 1500;
        let r = MockRenderer::default().render_and_capture(&req).unwrap();
        assert_eq!(r.reason, ValidityReason::Timeout);
    }

    #[test]
    fn external_origin_blocked_page_renders() {
        let r = render("<body><img src=\"https://evil.example.com/x.png\"><p>ok</p></body>");
        assert_eq!(
            r.blocked_requests,
            vec!["https://evil.example.com".to_string()]
        );
        assert!(r.is_valid());
    }

    #[test]
    fn page_made_of_blocked_resources_is_blank() {
        let r = enforce_validity(
            render("<body><iframe src=\"https://app.example.com/\"></iframe><img src=\"https://cdn.example.com/a.png\"></body>"),
            &ValidityPolicy::default(),
        );
        assert_eq!(r.reason, ValidityReason::BlankCapture);
        assert_eq!(r.blocked_requests.len(), 2);
    }

    #[test]
    fn empty_document_is_blank() {
        let r = enforce_validity(
            render("<html><body></body></html>"),
            &ValidityPolicy::default(),
        );
        assert_eq!(r.reason, ValidityReason::BlankCapture);
        assert!(r.shots.captures.is_empty());
    }

    #[test]
    fn crash_discards_partial_captures() {
        let r = render("<!-- sandbox:crash-after=2 --><p>x</p>");
        assert_eq!(r.reason, ValidityReason::LoadFailed);
        assert!(r.shots.captures.is_empty());
    }

    #[test]
    fn launch_failure_is_infrastructure() {
        let e = MockRenderer::default()
            .render_and_capture(&RenderRequest::new("<!-- sandbox:launch-failure -->"));
        assert!(matches!(e, Err(RenderError::LaunchFailure(_))));
    }

    #[test]
    fn guard_emulation_logs_violations() {
        let page = "<body><p>x</p><script>eval('1+1'); window.open('http://x'); alert('x'); fetch('https://evil.example.com/a');</script></body>";
        let r = render(page);
        assert_eq!(r.violations.len(), 4, "{:?}", r.violations);
        assert!(r.is_valid());
        let mut req = RenderRequest::new(page);
        req.guard = None;
        // an unguarded dialog blocks the page
        assert_eq!(
            MockRenderer::default()
                .render_and_capture(&req)
                .unwrap()
                .reason,
            ValidityReason::Timeout
        );
    }

    #[test]
    fn background_detection() {
        let r = render("<body style=\"background:#000\"></body>");
        assert_eq!(r.background, [0, 0, 0, 255]);
        let r = render("<style>body { background-color: #102030; }</style><body></body>");
        assert_eq!(r.background, [0x10, 0x20, 0x30, 255]);
    }

    #[test]
    fn seeded_animation_is_deterministic_only_with_guard() {
        let page = "<body><div class=box>a</div><script>setInterval(() => { box.style.left = Math.random() * 100 + 'px'; }, 500)</script></body>";
        let m = MockRenderer::default();
        let req = RenderRequest::new(page);
        let p = determinism_probe(&m, &req, 3).unwrap();
        assert!(p.deterministic);
        assert_ne!(
            p.hashes[0][0], p.hashes[0][1],
            "animated page should change between offsets"
        );
        let mut unguarded = req.clone();
        unguarded.guard = None;
        let p = determinism_probe(&m, &unguarded, 3).unwrap();
        assert!(!p.deterministic);
    }
}
