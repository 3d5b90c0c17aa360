//! Desk-scale training loop: the toy policy writes short pages, a scripted
//! critic rewards a character pattern, and GRPO updates the logits table.

use serde::{Deserialize, Serialize};

use crate::critic::{MockCritic, MockScript};
use crate::grpo::{
    compute_advantages, objective, observed_teacher, CharVocab, GrpoError, Hyper, LossBreakdown,
    TokenizedTrajectory, ToyPolicy,
};
use crate::render::mock::MockRenderer;
use crate::rng::derive_seed;
use crate::rollout::{
    run_group, AcceptanceMode, Decoding, EngineConfig, Ports, RolloutError, SandboxPort,
    ToyPolicyGenerator,
};
use crate::traj::{serialize_segments, Query, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainDemoConfig {
    pub steps: usize,
    pub group_size: usize,
    pub max_rounds: usize,
    pub max_resamples: usize,
    pub alphabet: String,
    /// Rewarded prefix of the page text.
    pub pattern: String,
    pub sample_len: usize,
    /// Feedback text of the scripted critic; `None` names the pattern.
    #[serde(default)]
    pub feedback: Option<String>,
    pub learning_rate: f64,
    /// Gradient steps per batch of rollouts.
    pub inner_epochs: usize,
    /// Taken from the run's optimizer section, not from the train section.
    #[serde(skip)]
    pub hyper: Hyper,
    pub seed: u64,
}

impl Default for TrainDemoConfig {
    fn default() -> Self {
        TrainDemoConfig {
            steps: 20,
            group_size: 8,
            max_rounds: 2,
            max_resamples: 3,
            alphabet: "hijoquvxyz".into(),
            pattern: "xy".into(),
            sample_len: 4,
            feedback: None,
            learning_rate: 5.0,
            inner_epochs: 4,
            hyper: Hyper::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainStep {
    pub step: usize,
    pub readout: f64,
    pub mean_return: f64,
    pub degenerate: bool,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainReport {
    pub initial_readout: f64,
    pub final_readout: f64,
    pub steps: Vec<TrainStep>,
    pub policy: ToyPolicy,
}

impl TrainReport {
    pub fn improvement(&self) -> f64 {
        self.final_readout / self.initial_readout
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error("step {0}: fewer than two successful trajectories")]
    GroupUnusable(usize),
    #[error("step {step}: loss is not finite ({loss})")]
    Diverged { step: usize, loss: f64 },
}

/// Probability that a fresh paragraph starts with `pattern` under the
/// training distribution. The paragraph follows markup, i.e. the other token.
pub fn pattern_probability(policy: &ToyPolicy, vocab: &CharVocab, pattern: &str) -> f64 {
    let mut ctx = vocab.other_id();
    let mut p = 1.0;
    for c in pattern.chars() {
        let t = vocab.id(c);
        p *= policy.probs(ctx)[t];
        ctx = t;
    }
    p
}

/// Token ids and authors of a trajectory's serialized output.
pub fn encode_trajectory(vocab: &CharVocab, trajectory: &Trajectory) -> TokenizedTrajectory {
    let mut tokens = Vec::new();
    let mut origins = Vec::new();
    for (seg, origin) in serialize_segments(&trajectory.rounds) {
        for c in seg.chars() {
            tokens.push(vocab.id(c));
            origins.push(origin);
        }
    }
    TokenizedTrajectory { tokens, origins }
}

pub fn train_demo(cfg: &TrainDemoConfig) -> Result<TrainReport, TrainError> {
    cfg.hyper.validate()?;
    let vocab = CharVocab::new(&cfg.alphabet)?;
    let reference = ToyPolicy::uniform(vocab.size());
    let mut policy = reference.clone();
    let critic = MockCritic::new(MockScript::Pattern {
        pattern: cfg.pattern.clone(),
        feedback: vec![cfg.feedback.clone().unwrap_or_else(|| cfg.pattern.clone())],
    });
    let renderer = SandboxPort::new(MockRenderer::default());
    let query = Query::new(
        "pattern",
        format!("Write a paragraph that begins with {}", cfg.pattern),
    )
    .expect("static query");
    let initial_readout = pattern_probability(&policy, &vocab, &cfg.pattern);
    let mut steps = Vec::new();

    for step in 0..cfg.steps {
        let old = policy.clone();
        let generator = ToyPolicyGenerator {
            policy: old.clone(),
            vocab: vocab.clone(),
            length: cfg.sample_len,
            request_until: usize::MAX,
        };
        let engine = EngineConfig {
            group_size: cfg.group_size,
            max_rounds: cfg.max_rounds,
            max_resamples: cfg.max_resamples,
            seed: derive_seed(cfg.seed, &[step as u64]),
            decoding: Decoding {
                temperature: 1.0,
                top_p: 1.0,
            },
            acceptance: AcceptanceMode::Forced,
            ..Default::default()
        };
        let group = run_group(
            &query,
            Ports {
                generator: &generator,
                critic: &critic,
                renderer: &renderer,
            },
            &engine,
        )?;
        if !group.is_usable() {
            return Err(TrainError::GroupUnusable(step));
        }
        let rollouts = group.to_rollouts(|t| encode_trajectory(&vocab, t))?;
        let adv = compute_advantages(&rollouts, cfg.hyper.clip_bound)?;
        let teacher = observed_teacher(&rollouts, vocab.size());
        let mut loss = None;
        for _ in 0..cfg.inner_epochs.max(1) {
            let o = objective(
                &policy, &old, &reference, &rollouts, &adv, &teacher, cfg.hyper,
            )?;
            if !o.breakdown.total.is_finite() || o.grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Diverged {
                    step: step + 1,
                    loss: o.breakdown.total,
                });
            }
            policy.apply_gradient(&o.grad, cfg.learning_rate);
            loss.get_or_insert(o.breakdown);
        }
        let returns = group.returns();
        steps.push(TrainStep {
            step: step + 1,
            readout: pattern_probability(&policy, &vocab, &cfg.pattern),
            mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
            degenerate: adv.degenerate,
            loss: loss.expect("at least one epoch"),
        });
    }
    let final_readout = pattern_probability(&policy, &vocab, &cfg.pattern);
    Ok(TrainReport {
        initial_readout,
        final_readout,
        steps,
        policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn readout_of_uniform_policy() {
        let v = CharVocab::new("xyz").unwrap();
        let p = ToyPolicy::uniform(v.size());
        assert!((pattern_probability(&p, &v, "xy") - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn short_run_is_deterministic_and_improves() {
        let cfg = TrainDemoConfig {
            steps: 5,
            ..Default::default()
        };
        let a = train_demo(&cfg).unwrap();
        let b = train_demo(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.final_readout > a.initial_readout);
    }
}
