//! Per-round score series compared with the simulated reference statistics.

mod common;

use common::oracle;
use relook_core::config::RunConfig;
use relook_core::critic::MockCritic;
use relook_core::render::mock::MockRenderer;
use relook_core::rollout::{collapse_experiment, CollapseSeries, Ports, SandboxPort};
use relook_core::traj::Query;

fn floats(v: &serde_json::Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

#[test]
fn series_match_reference_within_four_sd() {
    let o = oracle("collapse_oracle.json");
    let c = RunConfig::default().collapse;
    assert_eq!(c.rounds as u64, o["rounds"].as_u64().unwrap());
    assert_eq!(c.seeds as u64, o["runs"].as_u64().unwrap());
    assert_eq!(c.noise_sd, o["noise_sd"].as_f64().unwrap());

    let g = c.generator();
    let critic = MockCritic::new(c.critic());
    let r = SandboxPort::new(MockRenderer::default());
    let ports = Ports {
        generator: &g,
        critic: &critic,
        renderer: &r,
    };
    let q = [Query::new("collapse", "Build a landing page for a bakery").unwrap()];
    for base_seed in [0, 1, 2] {
        let cfg = relook_core::rollout::CollapseConfig {
            base_seed,
            ..c.experiment()
        };
        for (key, on) in [("on", true), ("off", false)] {
            let s = collapse_experiment(&q, on, ports, &cfg).unwrap();
            let want = floats(&o[key]["round_mean"]);
            let sd = floats(&o[key]["round_mean_sd"]);
            for (r, ((m, w), sd)) in s.mean.iter().zip(&want).zip(&sd).enumerate() {
                assert!(
                    (m - w).abs() <= 4.0 * sd,
                    "{key} seed {base_seed} round {}: {m} vs {w} (sd {sd})",
                    r + 1
                );
            }
            let rate = s.regression_rate();
            let want_rate = o[key]["regression_rate"].as_f64().unwrap();
            let rate_sd = o[key]["regression_rate_sd"].as_f64().unwrap();
            assert!(
                (rate - want_rate).abs() <= 4.0 * rate_sd + 0.02,
                "{key}: {rate}"
            );
            if on {
                assert!(s.runs.iter().all(|r| CollapseSeries::run_is_monotone(r)));
            } else {
                assert!(rate >= 0.5 && !s.mean_regressions.is_empty());
            }
        }
    }
}
