//! Evaluation summary over several seeded runs.
//!
//! Scores are stored on [0,1] everywhere else; this report is the only place
//! they are multiplied by 100.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::logs::TrajectoryRecord;

pub const PRESENTATION_SCALE: f64 = 100.0;

/// One scored run of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalEntry {
    pub query_id: String,
    pub seed_index: usize,
    /// Final judged score on [0,1]; `None` when no valid screenshot was made.
    pub score: Option<f64>,
    pub rounds: usize,
}

impl EvalEntry {
    /// The last kept round is the answer being judged.
    pub fn from_record(r: &TrajectoryRecord) -> Self {
        let last = r.rounds.last();
        EvalEntry {
            query_id: r.query_id.clone(),
            seed_index: r.index,
            score: last.filter(|x| x.valid).map(|x| x.score),
            rounds: r.rounds.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryScores {
    pub query_id: String,
    /// Presentation-scale score per seed index.
    pub scores: BTreeMap<usize, f64>,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub queries: Vec<QueryScores>,
    pub seed_means: BTreeMap<usize, f64>,
    /// Mean of the per-seed means.
    pub average: f64,
    pub valid_render_rate: f64,
    pub round_histogram: BTreeMap<usize, usize>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn build(entries: &[EvalEntry], wall_ms: &BTreeMap<String, f64>) -> Self {
        let scaled = |e: &EvalEntry| e.score.unwrap_or(0.0) * PRESENTATION_SCALE;
        let mut by_query: BTreeMap<&str, BTreeMap<usize, f64>> = BTreeMap::new();
        let mut by_seed: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut round_histogram = BTreeMap::new();
        for e in entries {
            by_query
                .entry(&e.query_id)
                .or_default()
                .insert(e.seed_index, scaled(e));
            by_seed.entry(e.seed_index).or_default().push(scaled(e));
            *round_histogram.entry(e.rounds).or_insert(0) += 1;
        }
        let queries = by_query
            .into_iter()
            .map(|(q, scores)| QueryScores {
                query_id: q.to_string(),
                mean: mean(scores.values().copied()),
                scores,
                wall_ms: wall_ms.get(q).copied(),
            })
            .collect();
        let seed_means: BTreeMap<usize, f64> = by_seed
            .into_iter()
            .map(|(s, v)| (s, mean(v.into_iter())))
            .collect();
        EvalReport {
            queries,
            average: mean(seed_means.values().copied()),
            seed_means,
            valid_render_rate: mean(
                entries
                    .iter()
                    .map(|e| if e.score.is_some() { 1.0 } else { 0.0 }),
            ),
            round_histogram,
        }
    }

    pub fn from_records(records: &[TrajectoryRecord], wall_ms: &BTreeMap<String, f64>) -> Self {
        Self::build(
            &records
                .iter()
                .map(EvalEntry::from_record)
                .collect::<Vec<_>>(),
            wall_ms,
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("query\tmean\tscores\n");
        for q in &self.queries {
            let scores: Vec<String> = q.scores.values().map(|v| format!("{v:.2}")).collect();
            s.push_str(&format!(
                "{}\t{:.2}\t{}\n",
                q.query_id,
                q.mean,
                scores.join(",")
            ));
        }
        for (k, m) in &self.seed_means {
            s.push_str(&format!("seed {k}\t{m:.2}\n"));
        }
        s.push_str(&format!(
            "average\t{:.2}\nvalid renders\t{:.3}\n",
            self.average, self.valid_render_rate
        ));
        let hist: Vec<String> = self
            .round_histogram
            .iter()
            .map(|(r, n)| format!("{r}:{n}"))
            .collect();
        s.push_str(&format!("rounds\t{}\n", hist.join(" ")));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(q: &str, seed: usize, score: Option<f64>, rounds: usize) -> EvalEntry {
        EvalEntry {
            query_id: q.into(),
            seed_index: seed,
            score,
            rounds,
        }
    }

    #[test]
    fn three_seed_average_and_zero_for_invalid() {
        let entries = vec![
            e("a", 0, Some(0.5), 1),
            e("a", 1, Some(0.7), 2),
            e("a", 2, None, 3),
            e("b", 0, Some(0.9), 2),
            e("b", 1, Some(0.1), 2),
            e("b", 2, Some(0.2), 1),
        ];
        let r = EvalReport::build(&entries, &BTreeMap::new());
        assert!((r.queries[0].mean - 40.0).abs() < 1e-9);
        assert_eq!(r.queries[0].scores[&2], 0.0);
        assert!((r.seed_means[&0] - 70.0).abs() < 1e-9);
        assert!((r.seed_means[&2] - 10.0).abs() < 1e-9);
        assert!((r.average - (70.0 + 40.0 + 10.0) / 3.0).abs() < 1e-9);
        assert!((r.valid_render_rate - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.round_histogram, BTreeMap::from([(1, 2), (2, 3), (3, 1)]));
    }

    #[test]
    fn empty_report() {
        let r = EvalReport::build(&[], &BTreeMap::new());
        assert_eq!(r.average, 0.0);
        assert!(r.to_text().contains("average"));
    }
}
