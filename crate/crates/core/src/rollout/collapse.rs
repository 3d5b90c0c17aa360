//! Per-round score series with and without strict acceptance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{run_trajectory, AcceptanceMode, EngineConfig, RolloutError};
use super::ports::Ports;
use crate::rng::{derive_seed, hash_str};
use crate::traj::Query;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseConfig {
    pub rounds: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub max_resamples: usize,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        CollapseConfig {
            rounds: 8,
            seeds: 100,
            base_seed: 0,
            max_resamples: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseSeries {
    pub acceptance: AcceptanceMode,
    /// Mean kept score per round over all runs.
    pub mean: Vec<f64>,
    /// Kept score per round of every run; a run that stopped early repeats
    /// its last kept score.
    pub runs: Vec<Vec<f64>>,
    /// Rounds (1-based) whose mean is below the previous round's.
    pub mean_regressions: Vec<usize>,
    pub runs_with_regression: usize,
}

impl CollapseSeries {
    pub fn run_is_monotone(run: &[f64]) -> bool {
        run.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn regression_rate(&self) -> f64 {
        self.runs_with_regression as f64 / self.runs.len().max(1) as f64
    }

    /// `round<TAB>mean` rows with a header.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("round\tmean\n");
        for (i, m) in self.mean.iter().enumerate() {
            s.push_str(&format!("{}\t{m:.6}\n", i + 1));
        }
        s
    }
}

/// One trajectory per (query, seed) with every round forced to ask for
/// feedback by the scripted generator.
pub fn collapse_experiment(
    queries: &[Query],
    acceptance_enabled: bool,
    ports: Ports<'_>,
    config: &CollapseConfig,
) -> Result<CollapseSeries, RolloutError> {
    let acceptance = if acceptance_enabled {
        AcceptanceMode::Forced
    } else {
        AcceptanceMode::AcceptAll
    };
    let engine = EngineConfig {
        group_size: 1,
        max_rounds: config.rounds,
        max_resamples: config.max_resamples,
        acceptance,
        ..Default::default()
    };
    engine.validate()?;
    let jobs: Vec<(&Query, u64)> = queries
        .iter()
        .flat_map(|q| {
            (0..config.seeds).map(move |s| {
                (
                    q,
                    derive_seed(config.base_seed, &[hash_str(&q.id), s as u64]),
                )
            })
        })
        .collect();
    let runs = jobs
        .par_iter()
        .map(|(q, seed)| {
            let o = run_trajectory(q, ports, &engine, *seed)?;
            let mut series = o.gated_scores.clone();
            let last = series.last().copied().unwrap_or(0.0);
            series.resize(config.rounds, last);
            Ok(series)
        })
        .collect::<Result<Vec<Vec<f64>>, RolloutError>>()?;
    let n = runs.len().max(1) as f64;
    let mean: Vec<f64> = (0..config.rounds)
        .map(|r| runs.iter().map(|s| s[r]).sum::<f64>() / n)
        .collect();
    let mean_regressions = (1..mean.len())
        .filter(|&i| mean[i] < mean[i - 1])
        .map(|i| i + 1)
        .collect();
    let runs_with_regression = runs
        .iter()
        .filter(|r| !CollapseSeries::run_is_monotone(r))
        .count();
    Ok(CollapseSeries {
        acceptance,
        mean,
        runs,
        mean_regressions,
        runs_with_regression,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::{MockCritic, MockScript};
    use crate::render::mock::MockRenderer;
    use crate::rollout::generators::DriftGenerator;
    use crate::rollout::ports::SandboxPort;

    #[test]
    fn forced_series_is_monotone_and_baseline_regresses() {
        let g = DriftGenerator::default();
        let c = MockCritic::new(MockScript::Quality {
            seed: 1,
            noise_sd: 0.05,
            feedback: vec!["fix it".into()],
        });
        let r = SandboxPort::new(MockRenderer::default());
        let ports = Ports {
            generator: &g,
            critic: &c,
            renderer: &r,
        };
        let qs = vec![
            Query::new("a", "page a").unwrap(),
            Query::new("b", "page b").unwrap(),
        ];
        let cfg = CollapseConfig {
            seeds: 10,
            ..Default::default()
        };
        let on = collapse_experiment(&qs, true, ports, &cfg).unwrap();
        assert_eq!(on.mean.len(), 8);
        assert_eq!(on.runs.len(), 20);
        assert!(on.runs.iter().all(|r| CollapseSeries::run_is_monotone(r)));
        assert!(on.mean_regressions.is_empty());
        let off = collapse_experiment(&qs, false, ports, &cfg).unwrap();
        assert!(!off.mean_regressions.is_empty());
        assert!(off.to_tsv().lines().count() == 9);
    }
}
