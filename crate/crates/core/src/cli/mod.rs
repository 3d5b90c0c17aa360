//! The `relook` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 infrastructure failure, 3 validation.

mod commands;
mod ports;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

pub use commands::{
    cmd_collapse_plot, cmd_dedup, cmd_eval_report, cmd_infer, cmd_render, cmd_rollout,
    cmd_train_demo, load_queries, CollapsePlot, InferRecord, InferSummary, QueryFailure,
    RenderSummary, RolloutSummary,
};
pub use ports::{build_critic, build_generator, build_renderer};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Infrastructure(String),
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Infrastructure(_) => 2,
            CliError::Validation(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<crate::logs::LogError> for CliError {
    fn from(e: crate::logs::LogError) -> Self {
        match e {
            crate::logs::LogError::Io { .. } => CliError::Usage(e.to_string()),
            crate::logs::LogError::Schema { .. } => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "relook",
    version,
    about = "Rollouts, training demo, inference and dedup for vision-judged web code generation"
)]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set engine.group_size=4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub group_size: Option<usize>,
    #[arg(long, global = true)]
    pub max_rounds: Option<usize>,
    #[arg(long, global = true)]
    pub max_resamples: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub top_p: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub clip_bound: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InferModeArg {
    Relook,
    CriticFree,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a group of trajectories per query and log them.
    Rollout {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep every capture under the run's screenshots directory.
        #[arg(long)]
        screenshots: bool,
    },
    /// Train the toy policy against a pattern-rewarding critic.
    TrainDemo {
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer queries with or without the critic and count port calls.
    Infer {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: InferModeArg,
    },
    /// De-duplicate a training corpus against a test corpus.
    Dedup {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one page in the sandbox and save its captures.
    Render {
        #[arg(long)]
        code: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-round mean scores with and without strict acceptance.
    CollapsePlot {
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a rollout run directory.
    EvalReport {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Cli {
    fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        let mut add = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push(format!("{k}={v}"));
            }
        };
        add("engine.group_size", self.group_size.map(|v| v.to_string()));
        add("engine.max_rounds", self.max_rounds.map(|v| v.to_string()));
        add(
            "engine.max_resamples",
            self.max_resamples.map(|v| v.to_string()),
        );
        add("engine.seed", self.seed.map(|v| v.to_string()));
        add(
            "engine.temperature",
            self.temperature.map(|v| format!("{v:?}")),
        );
        add("engine.top_p", self.top_p.map(|v| format!("{v:?}")));
        add("optimizer.gamma", self.gamma.map(|v| format!("{v:?}")));
        add("optimizer.beta", self.beta.map(|v| format!("{v:?}")));
        add(
            "optimizer.clip_bound",
            self.clip_bound.map(|v| format!("{v:?}")),
        );
        o.extend(self.overrides.iter().cloned());
        o
    }

    pub fn load_config(&self) -> Result<RunConfig, CliError> {
        let cfg = RunConfig::load(self.config.as_deref(), &self.overrides())?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse `args` (program name first) and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                1
            } else {
                0
            }
        }
    }
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(&cli) {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<String, CliError> {
    let cfg = cli.load_config()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.engine.workers)
        .build()
        .map_err(|e| CliError::Infrastructure(format!("worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Rollout {
            queries,
            out,
            screenshots,
        } => {
            let s = cmd_rollout(&cfg, queries, out, *screenshots)?;
            Ok(json(&s))
        }
        Command::TrainDemo { out } => {
            let r = cmd_train_demo(&cfg, out)?;
            Ok(format!(
                "readout {:.6} -> {:.6} ({:.2}x over {} steps)",
                r.initial_readout,
                r.final_readout,
                r.improvement(),
                r.steps.len()
            ))
        }
        Command::Infer { queries, out, mode } => Ok(json(&cmd_infer(&cfg, queries, out, *mode)?)),
        Command::Dedup { train, test, out } => {
            let o = cmd_dedup(&cfg, train, test.as_deref(), out)?;
            Ok(format!(
                "kept {} removed {} review {} compared {} of {} pairs",
                o.kept.len(),
                o.removed.len(),
                o.review.len(),
                o.candidate_pairs,
                o.total_pairs
            ))
        }
        Command::Render { code, out } => Ok(json(&cmd_render(&cfg, code, out)?)),
        Command::CollapsePlot { out } => {
            let p = cmd_collapse_plot(&cfg, out)?;
            Ok(format!(
                "acceptance on: {} of {} runs monotone; acceptance off: {} of {} runs regress",
                p.on.runs.len() - p.on.runs_with_regression,
                p.on.runs.len(),
                p.off.runs_with_regression,
                p.off.runs.len()
            ))
        }
        Command::EvalReport { run, out } => Ok(cmd_eval_report(run, out.as_deref())?.to_text()),
    })
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("summaries serialize")
}
