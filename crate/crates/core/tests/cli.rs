//! End-to-end runs of the `relook` binary against the mock ports.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixture;
use serde_json::Value;

fn relook(args: &[&str]) -> Output {
    relook_env(args, &[])
}

fn relook_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_relook"));
    cmd.args(args);
    for k in [
        "RELOOK_CRITIC_ENDPOINT",
        "RELOOK_CRITIC_API_KEY",
        "RELOOK_GENERATOR_ENDPOINT",
        "RELOOK_GENERATOR_API_KEY",
    ] {
        cmd.env_remove(k);
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&read(p)).unwrap()
}

fn two_queries(dir: &Path) -> String {
    let p = dir.join("queries.jsonl");
    std::fs::write(
        &p,
        "{\"id\": \"bakery\", \"text\": \"Build a landing page for a bakery\"}\n\
         {\"id\": \"pricing\", \"text\": \"Create a pricing table with three plans\"}\n",
    )
    .unwrap();
    p.display().to_string()
}

#[test]
fn rollout_logs_one_record_per_trajectory_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let q = two_queries(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = relook(&[
            "--group-size",
            "4",
            "rollout",
            "--queries",
            &q,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let log = read(&a.join("trajectories.jsonl"));
    assert_eq!(log.lines().count(), 8);
    assert_eq!(log, read(&b.join("trajectories.jsonl")));
    assert_eq!(
        read(&a.join("acceptance.jsonl")),
        read(&b.join("acceptance.jsonl"))
    );
    assert!(read(&a.join("config.toml")).contains("group_size = 4"));

    // the run directory is not reused
    let o = relook(&["rollout", "--queries", &q, "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 1);

    let report = dir.path().join("eval.json");
    let o = relook(&[
        "eval-report",
        "--run",
        a.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&report)["queries"].as_array().unwrap().len(), 2);
}

#[test]
fn unreachable_critic_is_infrastructure_and_writes_no_records() {
    let dir = tempfile::tempdir().unwrap();
    let q = two_queries(dir.path());
    let out = dir.path().join("run");
    let o = relook_env(
        &["rollout", "--queries", &q, "--out", out.to_str().unwrap()],
        &[("RELOOK_CRITIC_ENDPOINT", "http://127.0.0.1:9/critic")],
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("trajectories.jsonl").exists());
    assert!(out.join("reports/failures.json").exists());
}

#[test]
fn out_of_range_hyperparameter_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = relook(&[
        "--gamma",
        "0.5",
        "train-demo",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    let o = relook(&[
        "--set",
        "engine.max_resamples=11",
        "train-demo",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    assert_eq!(code(&relook(&["no-such-command"])), 1);
}

#[test]
fn train_demo_reports_improvement() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = relook(&["train-demo", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("reports/train_report.json"));
    let gain = r["final_readout"].as_f64().unwrap() / r["initial_readout"].as_f64().unwrap();
    assert!(gain >= 2.0, "{gain}");
    assert_eq!(
        read(&out.join("reports/train_trace.tsv")).lines().count(),
        22
    );
}

fn dedup(train: &Path, test: Option<&Path>, out: &Path) -> Value {
    let mut args = vec![
        "dedup".to_string(),
        "--train".into(),
        train.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    if let Some(t) = test {
        args.extend(["--test".into(), t.display().to_string()]);
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = relook(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("manifest.json"));
    let pairs = read(&out.join("pairs.jsonl")).lines().count();
    assert_eq!(pairs as u64, m["candidate_pairs"].as_u64().unwrap());
    m
}

#[test]
fn dedup_matches_golden_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = dedup(
        &fixture("dedup/train"),
        Some(&fixture("dedup/test")),
        &dir.path().join("out"),
    );
    assert_eq!(m, json(&fixture("dedup/golden_manifest.json")));
    let kept = read(&dir.path().join("out/kept.txt"));
    assert_eq!(kept, "d-weather\nf-empty\n");
}

#[test]
fn dedup_without_test_corpus_is_intra_train_only() {
    let dir = tempfile::tempdir().unwrap();
    let m = dedup(&fixture("dedup/train"), None, &dir.path().join("out"));
    let removed = m["removed"].as_array().unwrap();
    assert!(!removed.is_empty());
    assert!(removed.iter().all(|r| r["phase"] == "intra_train"));
    let ids: Vec<&str> = removed.iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert!(ids.contains(&"e-weather-copy"));
    assert_eq!(m["total_pairs"], 15);
}

#[test]
fn collapse_plot_has_eight_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("collapse.tsv");
    let o = relook(&["collapse-plot", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tsv = read(&out);
    let rows: Vec<Vec<f64>> = tsv
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.windows(2).all(|w| w[1][1] >= w[0][1]));
    assert!(rows.windows(2).any(|w| w[1][2] < w[0][2]));
}

#[test]
fn critic_free_inference_touches_only_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("infer");
    let q = fixture("queries.jsonl");
    let o = relook(&[
        "infer",
        "--queries",
        q.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--mode",
        "both",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("reports/infer.json"));
    let recs = s["records"].as_array().unwrap();
    let free: Vec<&Value> = recs.iter().filter(|r| r["mode"] == "critic_free").collect();
    assert_eq!(free.len(), 12);
    for r in &free {
        assert_eq!(r["critic_calls"], 0);
        assert_eq!(r["renderer_calls"], 0);
        assert!(r["rounds"].as_u64().unwrap() <= 3);
    }
    assert!(recs
        .iter()
        .filter(|r| r["mode"] == "relook")
        .all(|r| r["critic_calls"].as_u64().unwrap() > 0));
    assert!(s["time_ratio"].as_f64().is_some());
}

#[test]
fn render_writes_three_captures() {
    let dir = tempfile::tempdir().unwrap();
    let page = dir.path().join("page.html");
    std::fs::write(
        &page,
        "<html><body><h1>Hello</h1><p>world</p></body></html>",
    )
    .unwrap();
    let out = dir.path().join("shots");
    let o = relook(&[
        "render",
        "--code",
        page.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("render.json"));
    assert_eq!(s["valid"], true);
    for k in 1..=3 {
        assert!(out.join(format!("S{k}.png")).exists());
    }
}
