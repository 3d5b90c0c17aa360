//! The built TypeScript guard driven through the Rust injection script.
//! Needs `node` and `sandbox-guard/dist/guard.js`; skips when either is
//! missing.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use relook_core::render::GuardConfig;
use serde_json::Value;

// A bare page context: the guard finds its config on `window`, the page
// hits the guarded APIs, then load fires and the controller's schedule runs.
const HARNESS: &str = r#"
const vm = require("vm");
const fs = require("fs");
const script = fs.readFileSync(0, "utf8");
const hits = [];
const listeners = {};
const win = {
  location: { href: "http://sandbox.invalid/index.html" },
  navigator: {},
  performance: {},
  console,
  setTimeout,
  MessageChannel,
  URL,
  fetch: (u) => { hits.push(String(u)); return Promise.resolve("ok"); },
  alert: () => { throw new Error("native dialog"); },
  open: () => ({}),
  addEventListener: (t, f) => (listeners[t] = listeners[t] || []).push(f),
};
win.window = win;
vm.createContext(win);
vm.runInContext(script, win);
vm.runInContext(`
  window.ticks = 0;
  setInterval(() => window.ticks++, 500);
  window.draws = [Math.random(), Math.random()];
  window.loadTime = Date.now();
  try { eval("1+1"); } catch (e) {}
  window.open("http://example.com/");
  alert("hi");
  fetch("http://canary.example/beacon").catch(() => {});
  fetch("http://fixtures.invalid/ok.json");
`, win);
(async () => {
  const cfg = win.__SANDBOX_GUARD_CONFIG__;
  for (const f of listeners.load || []) f({});
  while (win[cfg.ready_signal_name] !== true) await new Promise((r) => setTimeout(r, 1));
  const ticks = [];
  for (const ms of [0, 1000, 1000]) {
    await win[cfg.advance_fn_name](ms);
    ticks.push(win.ticks);
  }
  console.log(JSON.stringify({
    violations: JSON.parse(vm.runInContext(`JSON.stringify(window.${cfg.violation_log_name})`, win)),
    hits,
    ticks,
    draws: win.draws,
    loadTime: win.loadTime,
  }));
})();
"#;

fn bundle() -> Option<String> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../sandbox-guard/dist/guard.js");
    std::fs::read_to_string(p).ok()
}

fn run(script: &str) -> Option<Value> {
    let mut child = Command::new("node")
        .args(["-e", HARNESS])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .ok()?;
    child
        .stdin
        .take()
        .unwrap()
        .write_all(script.as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    Some(serde_json::from_slice(&out.stdout).unwrap())
}

#[test]
fn bundle_honours_the_injected_config() {
    let Some(source) = bundle() else {
        eprintln!("skipped: sandbox-guard/dist/guard.js not built");
        return;
    };
    let cfg = GuardConfig::default();
    let Some(a) = run(&cfg.injection_script(&source)) else {
        eprintln!("skipped: node not found");
        return;
    };
    assert_eq!(
        a["violations"],
        serde_json::json!([
            "api:eval",
            "api:window.open",
            "api:alert",
            "network:http://canary.example"
        ])
    );
    assert_eq!(
        a["hits"],
        serde_json::json!(["http://fixtures.invalid/ok.json"])
    );
    assert_eq!(a["ticks"], serde_json::json!([0, 2, 4]));
    assert_eq!(a["loadTime"].as_u64(), Some(cfg.clock_epoch_ms));

    // same config, same page: same draws; another seed: different draws
    let b = run(&cfg.injection_script(&source)).unwrap();
    assert_eq!(a["draws"], b["draws"]);
    let other = GuardConfig {
        random_seed: cfg.random_seed + 1,
        ..cfg.clone()
    };
    let c = run(&other.injection_script(&source)).unwrap();
    assert_ne!(a["draws"], c["draws"]);
}
