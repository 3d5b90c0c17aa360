//! Python bindings for a small slice of `relook-core`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use relook_core::dedup::{self, DedupConfig, Instance, InstanceSource};
use relook_core::grpo::{compute_advantages, GroupRollouts, Hyper, TokenizedTrajectory};
use relook_core::reward::{self, LengthBounds};
use relook_core::train::{train_demo as run_train_demo, TrainDemoConfig};
use relook_core::traj;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
#[pyo3(signature = (length_tokens, l_start=12000, l_end=14000))]
fn length_penalty(length_tokens: usize, l_start: usize, l_end: usize) -> PyResult<f64> {
    let bounds = LengthBounds::new(l_start, l_end).map_err(value_err)?;
    Ok(reward::length_penalty(length_tokens, bounds))
}

/// Critic score if the capture set is valid, otherwise 0.
#[pyfunction]
fn gate(score: f64, valid: bool) -> PyResult<f64> {
    reward::gate(score, valid).map_err(value_err)
}

#[pyfunction]
fn aggregate_rounds(scores: Vec<f64>) -> PyResult<f64> {
    reward::aggregate_rounds(&scores).map_err(value_err)
}

/// Standardized, clipped advantage per trajectory of one group.
#[pyfunction]
#[pyo3(signature = (returns, clip_bound=None))]
fn group_advantages(returns: Vec<f64>, clip_bound: Option<f64>) -> PyResult<Vec<f64>> {
    let trajs = returns
        .iter()
        .map(|_| TokenizedTrajectory::policy_only(vec![0]))
        .collect();
    let g = GroupRollouts::new("py", trajs, returns).map_err(value_err)?;
    let clip = clip_bound.unwrap_or(Hyper::default().clip_bound);
    Ok(compute_advantages(&g, clip)
        .map_err(value_err)?
        .per_trajectory)
}

/// Rounds of a raw rollout as dicts.
#[pyfunction]
fn parse_rollout<'py>(py: Python<'py>, raw: &str) -> PyResult<Bound<'py, PyList>> {
    let rounds = traj::parse_rollout(raw).map_err(value_err)?;
    let out = PyList::empty(py);
    for r in rounds {
        let d = PyDict::new(py);
        d.set_item("index", r.index)?;
        d.set_item("text", r.text)?;
        d.set_item("code", r.code)?;
        d.set_item("requested_feedback", r.requested_feedback)?;
        d.set_item("feedback", r.feedback)?;
        out.append(d)?;
    }
    Ok(out)
}

/// Character-trigram TF-IDF cosine with the two texts as the corpus.
#[pyfunction]
fn tfidf_cosine(a: &str, b: &str) -> f64 {
    dedup::tfidf_char3_cosine(a, b, &dedup::CorpusStats::from_texts([a, b]))
}

#[pyfunction]
fn code_jaccard(a: &str, b: &str) -> f64 {
    dedup::code_token_jaccard(a, b)
}

fn instances(json: &Bound<'_, PyModule>, items: &Bound<'_, PyAny>) -> PyResult<Vec<Instance>> {
    let text: String = json.call_method1("dumps", (items,))?.extract()?;
    let src: Vec<InstanceSource> = serde_json::from_str(&text).map_err(value_err)?;
    Ok(src.iter().map(Instance::from_source).collect())
}

/// De-duplicate `train` against `test`, then within `train`. Items are dicts
/// with `id`, `prompt` and optional `markup` and `code`; returns the manifest
/// as a dict.
#[pyfunction]
#[pyo3(signature = (train, test=None))]
fn dedup_corpus<'py>(
    py: Python<'py>,
    train: &Bound<'py, PyAny>,
    test: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let json = py.import("json")?;
    let train = instances(&json, train)?;
    let test = match test {
        Some(t) => instances(&json, t)?,
        None => Vec::new(),
    };
    let out = py.detach(|| dedup::dedup_corpus(&train, &test, &DedupConfig::default()));
    let text = serde_json::to_string(&out).map_err(value_err)?;
    json.call_method1("loads", (text,))
}

/// Toy training run; returns `(initial_readout, final_readout)`.
#[pyfunction]
#[pyo3(signature = (seed=0, steps=None))]
fn train_demo(py: Python<'_>, seed: u64, steps: Option<usize>) -> PyResult<(f64, f64)> {
    let mut cfg = TrainDemoConfig {
        seed,
        ..TrainDemoConfig::default()
    };
    if let Some(s) = steps {
        cfg.steps = s;
    }
    let r = py.detach(|| run_train_demo(&cfg)).map_err(value_err)?;
    Ok((r.initial_readout, r.final_readout))
}

/// Run the command-line tool in-process; `args` excludes the program name.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("relook".to_string()).chain(args).collect();
    py.detach(|| relook_core::cli::main_with_args(argv))
}

#[pymodule]
fn relook(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(length_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(gate, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_rounds, m)?)?;
    m.add_function(wrap_pyfunction!(group_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(parse_rollout, m)?)?;
    m.add_function(wrap_pyfunction!(tfidf_cosine, m)?)?;
    m.add_function(wrap_pyfunction!(code_jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(dedup_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(train_demo, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
