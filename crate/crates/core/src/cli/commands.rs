use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::ports::{build_critic, build_generator, build_renderer, SavingRenderer};
use super::{CliError, InferModeArg};
use crate::config::RunConfig;
use crate::critic::MockCritic;
use crate::dedup::{dedup_corpus, load_instances, DedupOutcome, Instance};
use crate::eval::EvalReport;
use crate::logs::{
    read_trajectory_log, write_new, AcceptanceRecord, JsonlBuffer, RunDir, TrajectoryRecord,
};
use crate::render::mock::MockRenderer;
use crate::render::{Capture, RenderError, ValidityReason};
use crate::rollout::{
    collapse_experiment, run_group, run_inference, AttemptContext, CollapseSeries, Counted,
    InferenceMode, Ports, RendererPort, RolloutError, SandboxPort,
};
use crate::train::{train_demo, TrainError, TrainReport};
use crate::traj::{Query, Trajectory};

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn rollout_error(e: RolloutError) -> CliError {
    if e.is_infrastructure() {
        CliError::Infrastructure(e.to_string())
    } else {
        CliError::Validation(e.to_string())
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).expect("reports serialize") + "\n";
    write_new(path, text.as_bytes()).map_err(usage)
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Queries from a JSON array (`.json`) or one JSON object per line.
pub fn load_queries(path: &Path) -> Result<Vec<Query>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let parsed: Result<Vec<Query>, String> = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        crate::logs::parse_jsonl(&text).map_err(|e| e.to_string())
    };
    let queries = parsed.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut seen = BTreeSet::new();
    for q in &queries {
        q.validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if !seen.insert(q.id.as_str()) {
            return Err(CliError::Validation(format!("duplicate query id {}", q.id)));
        }
    }
    if queries.is_empty() {
        return Err(CliError::Validation(format!(
            "{} holds no queries",
            path.display()
        )));
    }
    Ok(queries)
}

fn fresh_run(out: &Path, cfg: &RunConfig) -> Result<RunDir, CliError> {
    let run = RunDir::create(out)?;
    if run.config_snapshot().exists() {
        return Err(usage(format!(
            "{} already holds a run; choose a new directory",
            out.display()
        )));
    }
    write_new(&run.config_snapshot(), cfg.to_toml().as_bytes())?;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryFailure {
    pub query_id: String,
    pub index: usize,
    pub seed: u64,
    pub reason: String,
    pub infrastructure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSummary {
    pub queries: usize,
    pub records: usize,
    pub failures: Vec<QueryFailure>,
    /// Queries with fewer than two successful trajectories.
    pub unusable_groups: Vec<String>,
    pub wall_ms: BTreeMap<String, f64>,
}

pub const ROLLOUT_SUMMARY: &str = "rollout_summary.json";

/// Logs are only written once every group has finished without an
/// infrastructure failure, so a failed run leaves no reward records behind.
pub fn cmd_rollout(
    cfg: &RunConfig,
    queries: &Path,
    out: &Path,
    screenshots: bool,
) -> Result<RolloutSummary, CliError> {
    let queries = load_queries(queries)?;
    let run = fresh_run(out, cfg)?;
    let generator = build_generator(cfg);
    let critic = build_critic(
        cfg,
        cfg.critic
            .endpoint
            .as_ref()
            .map(|_| run.critic_transcript()),
    )?;
    let base = build_renderer(cfg)?;
    let saving = SavingRenderer {
        inner: base.as_ref(),
        root: run.screenshots(),
    };
    let renderer: &dyn RendererPort = if screenshots { &saving } else { base.as_ref() };
    let ports = Ports {
        generator: generator.as_ref(),
        critic: critic.as_ref(),
        renderer,
    };
    let engine = cfg.engine_config();

    let mut records = JsonlBuffer::default();
    let mut sidecar = JsonlBuffer::default();
    let mut summary = RolloutSummary {
        queries: queries.len(),
        records: 0,
        failures: Vec::new(),
        unusable_groups: Vec::new(),
        wall_ms: BTreeMap::new(),
    };
    for q in &queries {
        let t = Instant::now();
        let group = run_group(q, ports, &engine).map_err(rollout_error)?;
        summary.wall_ms.insert(q.id.clone(), elapsed_ms(t));
        let index_of = |seed: u64| {
            (0..engine.group_size)
                .find(|&i| engine.trajectory_seed(&q.id, i) == seed)
                .unwrap_or(0)
        };
        for o in &group.outcomes {
            let i = index_of(o.seed);
            records.push(&TrajectoryRecord::from_outcome(
                &q.id,
                i,
                engine.acceptance,
                o,
            ));
            sidecar.push(&AcceptanceRecord::from_outcome(&q.id, i, o));
        }
        summary
            .failures
            .extend(group.failures.iter().map(|f| QueryFailure {
                query_id: q.id.clone(),
                index: f.index,
                seed: f.seed,
                reason: f.reason.clone(),
                infrastructure: f.infrastructure,
            }));
        if !group.is_usable() {
            summary.unusable_groups.push(q.id.clone());
        }
    }
    let infra: Vec<&QueryFailure> = summary
        .failures
        .iter()
        .filter(|f| f.infrastructure)
        .collect();
    if let Some(first) = infra.first() {
        let msg = format!(
            "{} trajectories hit infrastructure failures; first: {} #{}: {}",
            infra.len(),
            first.query_id,
            first.index,
            first.reason
        );
        write_json(&run.reports().join("failures.json"), &summary.failures)?;
        return Err(CliError::Infrastructure(msg));
    }
    summary.records = records.len();
    records.write_new(&run.trajectories())?;
    sidecar.write_new(&run.acceptance())?;
    write_json(&run.reports().join(ROLLOUT_SUMMARY), &summary)?;
    Ok(summary)
}

pub fn cmd_train_demo(cfg: &RunConfig, out: &Path) -> Result<TrainReport, CliError> {
    let run = fresh_run(out, cfg)?;
    let report = train_demo(&cfg.train_demo()).map_err(|e| match e {
        TrainError::Rollout(r) => rollout_error(r),
        other => CliError::Validation(other.to_string()),
    })?;
    let mut tsv =
        String::from("step\tsurrogate\tkl\tdistill\ttotal\treadout\tmean_return\tdegenerate\n");
    tsv.push_str(&format!("0\t\t\t\t\t{:.8}\t\t\n", report.initial_readout));
    for s in &report.steps {
        let l = &s.loss;
        tsv.push_str(&format!(
            "{}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.6}\t{}\n",
            s.step, l.surrogate, l.kl, l.distill, l.total, s.readout, s.mean_return, s.degenerate
        ));
    }
    write_new(&run.reports().join("train_trace.tsv"), tsv.as_bytes())?;
    write_json(&run.reports().join("train_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferRecord {
    pub query_id: String,
    pub mode: String,
    pub generator_calls: usize,
    pub critic_calls: usize,
    pub renderer_calls: usize,
    pub rounds: usize,
    pub truncated: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferSummary {
    pub records: Vec<InferRecord>,
    pub relook_ms: f64,
    pub critic_free_ms: f64,
    /// Relook wall-clock over critic-free wall-clock on this machine, when
    /// both modes ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_ratio: Option<f64>,
}

#[derive(Serialize)]
struct InferOutput<'a> {
    query_id: &'a str,
    mode: &'a str,
    trajectory: &'a Trajectory,
}

pub fn cmd_infer(
    cfg: &RunConfig,
    queries: &Path,
    out: &Path,
    mode: InferModeArg,
) -> Result<InferSummary, CliError> {
    let queries = load_queries(queries)?;
    let run = fresh_run(out, cfg)?;
    let generator = build_generator(cfg);
    let critic = build_critic(
        cfg,
        cfg.critic
            .endpoint
            .as_ref()
            .map(|_| run.critic_transcript()),
    )?;
    let renderer = build_renderer(cfg)?;
    let engine = cfg.engine_config();
    let mut modes = Vec::new();
    if mode != InferModeArg::CriticFree {
        modes.push(("relook", InferenceMode::WithCritic));
    }
    if mode != InferModeArg::Relook {
        modes.push((
            "critic_free",
            InferenceMode::CriticFree {
                max_self_edits: cfg.engine.self_edit_cap,
            },
        ));
    }
    let mut outputs = JsonlBuffer::default();
    let mut summary = InferSummary {
        records: Vec::new(),
        relook_ms: 0.0,
        critic_free_ms: 0.0,
        time_ratio: None,
    };
    for (name, m) in &modes {
        for q in &queries {
            let (g, c, r) = (
                Counted::new(generator.as_ref()),
                Counted::new(critic.as_ref()),
                Counted::new(renderer.as_ref()),
            );
            let t = Instant::now();
            let traj = run_inference(
                q,
                Ports {
                    generator: &g,
                    critic: &c,
                    renderer: &r,
                },
                &engine,
                m,
                engine.trajectory_seed(&q.id, 0),
            )
            .map_err(rollout_error)?;
            let wall_ms = elapsed_ms(t);
            *if *name == "relook" {
                &mut summary.relook_ms
            } else {
                &mut summary.critic_free_ms
            } += wall_ms;
            outputs.push(&InferOutput {
                query_id: &q.id,
                mode: name,
                trajectory: &traj,
            });
            summary.records.push(InferRecord {
                query_id: q.id.clone(),
                mode: name.to_string(),
                generator_calls: g.calls(),
                critic_calls: c.calls(),
                renderer_calls: r.calls(),
                rounds: traj.rounds.len(),
                truncated: traj.truncated,
                wall_ms,
            });
        }
    }
    if modes.len() == 2 && summary.critic_free_ms > 0.0 {
        summary.time_ratio = Some(summary.relook_ms / summary.critic_free_ms);
    }
    outputs.write_new(&run.root.join("infer_outputs.jsonl"))?;
    write_json(&run.reports().join("infer.json"), &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct Manifest<'a> {
    kept: &'a [String],
    removed: &'a [crate::dedup::Removal],
    review: &'a [crate::dedup::PairRecord],
    notes: &'a [(String, String)],
    candidate_pairs: usize,
    total_pairs: usize,
}

fn load_dir(dir: &Path) -> Result<Vec<Instance>, CliError> {
    let sources = load_instances(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => CliError::Validation(e.to_string()),
        _ => usage(format!("{}: {e}", dir.display())),
    })?;
    Ok(sources.iter().map(Instance::from_source).collect())
}

/// Writes `manifest.json`, `kept.txt` and `pairs.jsonl` (one line per
/// compared pair) into `out`.
pub fn cmd_dedup(
    cfg: &RunConfig,
    train: &Path,
    test: Option<&Path>,
    out: &Path,
) -> Result<DedupOutcome, CliError> {
    let train = load_dir(train)?;
    let test = match test {
        Some(t) => load_dir(t)?,
        None => Vec::new(),
    };
    let ids: BTreeSet<&str> = train.iter().chain(&test).map(|i| i.id.as_str()).collect();
    if ids.len() != train.len() + test.len() {
        return Err(CliError::Validation(
            "instance ids must be unique across both corpora".into(),
        ));
    }
    let outcome = dedup_corpus(&train, &test, &cfg.dedup);
    std::fs::create_dir_all(out).map_err(usage)?;
    let manifest = Manifest {
        kept: &outcome.kept,
        removed: &outcome.removed,
        review: &outcome.review,
        notes: &outcome.notes,
        candidate_pairs: outcome.candidate_pairs,
        total_pairs: outcome.total_pairs,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    let kept: String = outcome.kept.iter().map(|k| format!("{k}\n")).collect();
    write_new(&out.join("kept.txt"), kept.as_bytes())?;
    let mut pairs = JsonlBuffer::default();
    for p in &outcome.pairs {
        pairs.push(p);
    }
    pairs.write_new(&out.join("pairs.jsonl"))?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSummary {
    pub valid: bool,
    pub reason: ValidityReason,
    pub elapsed_ms: u64,
    pub captures: Vec<String>,
    pub hashes: Vec<String>,
    pub violations: Vec<String>,
    pub blocked_requests: Vec<String>,
    pub console_errors: Vec<String>,
}

pub fn cmd_render(cfg: &RunConfig, code: &Path, out: &Path) -> Result<RenderSummary, CliError> {
    let page =
        std::fs::read_to_string(code).map_err(|e| usage(format!("{}: {e}", code.display())))?;
    let renderer = build_renderer(cfg)?;
    let ctx = AttemptContext {
        trajectory_seed: cfg.engine.seed,
        round: 1,
        attempt: 1,
    };
    let r = renderer.render(&ctx, &page).map_err(|e| match e {
        RenderError::InvalidRequest(_) => CliError::Validation(e.to_string()),
        _ => CliError::Infrastructure(e.to_string()),
    })?;
    std::fs::create_dir_all(out).map_err(usage)?;
    let mut captures = Vec::new();
    for (i, c) in r.shots.captures.iter().enumerate() {
        let p = out.join(format!("S{}.png", i + 1));
        write_new(&p, &c.png)?;
        captures.push(p.display().to_string());
    }
    let summary = RenderSummary {
        valid: r.is_valid(),
        reason: r.reason,
        elapsed_ms: r.elapsed_ms,
        captures,
        hashes: r.shots.captures.iter().map(Capture::content_hash).collect(),
        violations: r.violations,
        blocked_requests: r.blocked_requests,
        console_errors: r.console_errors,
    };
    write_json(&out.join("render.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapsePlot {
    pub on: CollapseSeries,
    pub off: CollapseSeries,
}

impl CollapsePlot {
    /// `round`, `acceptance_on`, `acceptance_off` columns, one row per round.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("round\tacceptance_on\tacceptance_off\n");
        for (i, (a, b)) in self.on.mean.iter().zip(&self.off.mean).enumerate() {
            s.push_str(&format!("{}\t{a:.6}\t{b:.6}\n", i + 1));
        }
        s
    }
}

/// Scripted reviser and noisy quality critic, run once with strict acceptance
/// and once keeping every revision.
pub fn cmd_collapse_plot(cfg: &RunConfig, out: &Path) -> Result<CollapsePlot, CliError> {
    let c = &cfg.collapse;
    let generator = c.generator();
    let critic = MockCritic::new(c.critic());
    let renderer = SandboxPort::new(MockRenderer::default());
    let ports = Ports {
        generator: &generator,
        critic: &critic,
        renderer: &renderer,
    };
    let queries =
        [Query::new("collapse", "Build a landing page for a bakery").expect("static query")];
    let on = collapse_experiment(&queries, true, ports, &c.experiment()).map_err(rollout_error)?;
    let off =
        collapse_experiment(&queries, false, ports, &c.experiment()).map_err(rollout_error)?;
    let plot = CollapsePlot { on, off };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(usage)?;
    }
    write_new(out, plot.to_tsv().as_bytes())?;
    Ok(plot)
}

pub fn cmd_eval_report(run: &Path, out: Option<&Path>) -> Result<EvalReport, CliError> {
    let dir = RunDir {
        root: run.to_path_buf(),
    };
    let records = read_trajectory_log(&dir.trajectories())?;
    let wall_ms = std::fs::read_to_string(dir.reports().join(ROLLOUT_SUMMARY))
        .ok()
        .and_then(|t| serde_json::from_str::<RolloutSummary>(&t).ok())
        .map(|s| s.wall_ms)
        .unwrap_or_default();
    let report = EvalReport::from_records(&records, &wall_ms);
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    Ok(report)
}
