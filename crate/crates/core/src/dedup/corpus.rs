//! Corpus-level de-duplication with safe candidate pruning.
//!
//! Pairs are only compared if some view could possibly fire. Lexical
//! candidates come from a prefix index over TF-IDF vectors: features are
//! ordered rarest first and each indexed vector contributes the shortest
//! prefix whose remaining norm is below the review threshold, so by
//! Cauchy-Schwarz a pair sharing nothing in that prefix has cosine below it.
//! Set views use the usual Jaccard prefix filter.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    adjudicate, compare, CorpusStats, Decision, DedupConfig, Instance, InstanceSource, Prepared,
    SimilarityReport, TfidfVector, Verdict,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    TrainTest,
    IntraTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub phase: Phase,
    pub a: String,
    pub b: String,
    pub report: SimilarityReport,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Removal {
    pub id: String,
    pub against: String,
    pub phase: Phase,
    pub verdict: Verdict,
    pub report: SimilarityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DedupOutcome {
    /// Train ids kept, in id order.
    pub kept: Vec<String>,
    pub removed: Vec<Removal>,
    /// Borderline pairs of kept instances.
    pub review: Vec<PairRecord>,
    /// Every compared pair.
    pub pairs: Vec<PairRecord>,
    pub notes: Vec<(String, String)>,
    pub candidate_pairs: usize,
    pub total_pairs: usize,
}

fn gram_rank(stats: &CorpusStats) -> HashMap<&str, (usize, &str)> {
    stats
        .df
        .iter()
        .map(|(g, &df)| (g.as_str(), (df, g.as_str())))
        .collect()
}

/// Prefix of `v` (rarest features first) whose complement has norm < `t`.
fn cosine_prefix<'a>(
    v: &'a TfidfVector,
    rank: &HashMap<&str, (usize, &str)>,
    t: f64,
) -> Vec<&'a str> {
    let mut f: Vec<(&str, f64)> = v.weights.iter().map(|(g, w)| (g.as_str(), *w)).collect();
    f.sort_by_key(|(g, _)| rank.get(g).copied().unwrap_or((0, g)));
    let mut rest: f64 = f.iter().map(|(_, w)| w * w).sum();
    let mut out = Vec::new();
    for (g, w) in f {
        if rest < t * t {
            break;
        }
        out.push(g);
        rest -= w * w;
    }
    out
}

fn set_prefix<'a, T: Ord + std::hash::Hash>(
    s: &'a BTreeSet<T>,
    freq: &HashMap<&'a T, usize>,
    t: f64,
) -> Vec<&'a T> {
    let mut items: Vec<&T> = s.iter().collect();
    items.sort_by(|a, b| freq.get(a).cmp(&freq.get(b)).then(a.cmp(b)));
    let keep = s.len() - ((t * s.len() as f64) - 1e-9).ceil().max(0.0) as usize + 1;
    items.truncate(keep.min(s.len()));
    items
}

fn set_candidates<T: Ord + std::hash::Hash>(
    probe: &[Option<&BTreeSet<T>>],
    indexed: &[Option<&BTreeSet<T>>],
    t: f64,
    out: &mut BTreeSet<(usize, usize)>,
) {
    let mut freq: HashMap<&T, usize> = HashMap::new();
    for s in probe.iter().chain(indexed).flatten() {
        for x in s.iter() {
            *freq.entry(x).or_insert(0) += 1;
        }
    }
    let mut postings: HashMap<&T, Vec<usize>> = HashMap::new();
    for (j, s) in indexed.iter().enumerate() {
        if let Some(s) = s {
            for x in set_prefix(s, &freq, t) {
                postings.entry(x).or_default().push(j);
            }
        }
    }
    for (i, s) in probe.iter().enumerate() {
        if let Some(s) = s {
            for x in s.iter() {
                for &j in postings.get(x).map(Vec::as_slice).unwrap_or(&[]) {
                    out.insert((i, j));
                }
            }
        }
    }
}

/// Pairs `(probe index, indexed index)` that survive pruning.
pub fn candidate_pairs(
    probe: &[&Prepared],
    indexed: &[&Prepared],
    stats: &CorpusStats,
    cfg: &DedupConfig,
) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    if cfg.exhaustive {
        for i in 0..probe.len() {
            for j in 0..indexed.len() {
                out.insert((i, j));
            }
        }
        return out;
    }
    let t = &cfg.thresholds;
    let rank = gram_rank(stats);
    let mut postings: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, p) in indexed.iter().enumerate() {
        if p.tfidf.is_empty() {
            continue;
        }
        for g in cosine_prefix(&p.tfidf, &rank, t.review_low.min(t.lexical)) {
            postings.entry(g).or_default().push(j);
        }
    }
    for (i, p) in probe.iter().enumerate() {
        for (g, _) in &p.tfidf.weights {
            for &j in postings.get(g.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                out.insert((i, j));
            }
        }
    }
    // empty prompts match each other exactly
    for (i, p) in probe.iter().enumerate() {
        if p.tfidf.is_empty() {
            out.extend(
                indexed
                    .iter()
                    .enumerate()
                    .filter(|(_, q)| q.tfidf.is_empty())
                    .map(|(j, _)| (i, j)),
            );
        }
    }
    let dom_t = t.fallback_low.min(t.dom);
    let pb: Vec<_> = probe.iter().map(|p| p.bigrams.as_ref()).collect();
    let ib: Vec<_> = indexed.iter().map(|p| p.bigrams.as_ref()).collect();
    set_candidates(&pb, &ib, dom_t, &mut out);
    let pc: Vec<_> = probe.iter().map(|p| p.code_set.as_ref()).collect();
    let ic: Vec<_> = indexed.iter().map(|p| p.code_set.as_ref()).collect();
    set_candidates(&pc, &ic, t.code, &mut out);
    out
}

/// Remove train instances that collide with any test instance, then
/// intra-train duplicates keeping the first by id.
pub fn dedup_corpus(train: &[Instance], test: &[Instance], cfg: &DedupConfig) -> DedupOutcome {
    let mut train: Vec<&Instance> = train.iter().collect();
    train.sort_by(|a, b| a.id.cmp(&b.id));
    let mut test: Vec<&Instance> = test.iter().collect();
    test.sort_by(|a, b| a.id.cmp(&b.id));
    let stats = CorpusStats::from_texts(train.iter().chain(&test).map(|i| i.prompt_text.as_str()));
    let prep_train: Vec<Prepared> = train
        .par_iter()
        .map(|i| Prepared::new(i, &stats, cfg.bigram_mode))
        .collect();
    let prep_test: Vec<Prepared> = test
        .par_iter()
        .map(|i| Prepared::new(i, &stats, cfg.bigram_mode))
        .collect();
    let notes = train
        .iter()
        .chain(&test)
        .flat_map(|i| i.notes.iter().map(|n| (i.id.clone(), n.clone())))
        .collect();

    let judge = |phase: Phase, a: usize, b: usize, other: &[&Instance], prep_other: &[Prepared]| {
        let report = compare((train[a], &prep_train[a]), (other[b], &prep_other[b]), cfg);
        PairRecord {
            phase,
            a: train[a].id.clone(),
            b: other[b].id.clone(),
            report,
            verdict: adjudicate(&report, &cfg.thresholds),
        }
    };

    let tr: Vec<&Prepared> = prep_train.iter().collect();
    let te: Vec<&Prepared> = prep_test.iter().collect();
    let c1: Vec<(usize, usize)> = candidate_pairs(&tr, &te, &stats, cfg).into_iter().collect();
    let p1: Vec<PairRecord> = c1
        .par_iter()
        .map(|&(a, b)| judge(Phase::TrainTest, a, b, &test, &prep_test))
        .collect();
    let mut removed_flag = vec![false; train.len()];
    let mut removed = Vec::new();
    for (&(a, _), rec) in c1.iter().zip(&p1) {
        if !removed_flag[a] && rec.verdict.decision == Decision::Remove {
            removed_flag[a] = true;
            removed.push(Removal {
                id: rec.a.clone(),
                against: rec.b.clone(),
                phase: Phase::TrainTest,
                verdict: rec.verdict,
                report: rec.report,
            });
        }
    }

    let c2: Vec<(usize, usize)> = candidate_pairs(&tr, &tr, &stats, cfg)
        .into_iter()
        .filter(|&(a, b)| b < a && !removed_flag[a] && !removed_flag[b])
        .collect();
    let p2: Vec<PairRecord> = c2
        .par_iter()
        .map(|&(a, b)| judge(Phase::IntraTrain, a, b, &train, &prep_train))
        .collect();
    // c2 is sorted by (a, b): earlier instances are settled first
    for (&(a, b), rec) in c2.iter().zip(&p2) {
        if !removed_flag[a] && !removed_flag[b] && rec.verdict.decision == Decision::Remove {
            removed_flag[a] = true;
            removed.push(Removal {
                id: rec.a.clone(),
                against: rec.b.clone(),
                phase: Phase::IntraTrain,
                verdict: rec.verdict,
                report: rec.report,
            });
        }
    }

    let id_index: HashMap<&str, usize> = train
        .iter()
        .enumerate()
        .map(|(i, x)| (x.id.as_str(), i))
        .collect();
    let alive = |id: &str| id_index.get(id).is_none_or(|&i| !removed_flag[i]);
    let pairs: Vec<PairRecord> = p1.into_iter().chain(p2).collect();
    let review = pairs
        .iter()
        .filter(|p| p.verdict.decision == Decision::Review && alive(&p.a) && alive(&p.b))
        .cloned()
        .collect();
    DedupOutcome {
        kept: train
            .iter()
            .zip(&removed_flag)
            .filter(|(_, r)| !**r)
            .map(|(i, _)| i.id.clone())
            .collect(),
        removed,
        review,
        candidate_pairs: c1.len() + c2.len(),
        total_pairs: train.len() * test.len() + train.len() * train.len().saturating_sub(1) / 2,
        pairs,
        notes,
    }
}

/// Instance files (`*.json`) of a directory, in path order.
pub fn load_instances(dir: &Path) -> std::io::Result<Vec<InstanceSource>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}: {e}", p.display()),
                )
            })
        })
        .collect()
}
