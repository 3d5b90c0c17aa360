//! Central-difference gradient checking with kink detection.

use serde::{Deserialize, Serialize};

pub const DEFAULT_STEP: f64 = 1e-5;

/// One evaluation of a scalar function: its value, analytic gradient, and a
/// label for the piecewise branch it sits on.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub regime: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a branch boundary.
    pub skipped_kinks: usize,
    /// Worst one-sided difference error over skipped coordinates.
    pub max_one_sided_error: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare `f`'s analytic gradient at `x` to central differences with step
/// `h`, skipping coordinates where `x +- h` land on a different branch than
/// `x`.
pub fn check<F>(f: F, x: &[f64], h: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> Evaluation,
{
    let base = f(x);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        max_one_sided_error: 0.0,
    };
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let plus = f(&xp);
        xp[k] = x[k] - h;
        let minus = f(&xp);
        xp[k] = x[k];
        let a = base.grad[k];
        if plus.regime != base.regime || minus.regime != base.regime {
            report.skipped_kinks += 1;
            let one_sided = if plus.regime == base.regime {
                (plus.value - base.value) / h
            } else {
                (base.value - minus.value) / h
            };
            report.max_one_sided_error =
                report.max_one_sided_error.max(relative_error(a, one_sided));
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * h);
        report.checked += 1;
        report.max_relative_error = report.max_relative_error.max(relative_error(a, numeric));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grpo::advantage::{compute_advantages, GroupRollouts, TokenizedTrajectory};
    use crate::grpo::loss::{objective, observed_teacher, Hyper};
    use crate::grpo::policy::ToyPolicy;
    use crate::traj::TokenOrigin::{Critic, Policy};

    #[test]
    fn quadratic_is_exact() {
        let f = |x: &[f64]| Evaluation {
            value: x
                .iter()
                .enumerate()
                .map(|(i, v)| (i as f64 + 1.0) * v * v)
                .sum(),
            grad: x
                .iter()
                .enumerate()
                .map(|(i, v)| 2.0 * (i as f64 + 1.0) * v)
                .collect(),
            regime: vec![],
        };
        let r = check(f, &[0.3, -1.2, 2.5], DEFAULT_STEP);
        assert_eq!(r.checked, 3);
        assert!(r.max_relative_error < 1e-8, "{r:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |x: &[f64]| Evaluation {
            value: x[0].powi(3),
            grad: vec![2.0 * x[0]],
            regime: vec![],
        };
        assert!(check(f, &[1.5], DEFAULT_STEP).max_relative_error > 0.1);
    }

    #[test]
    fn kink_is_skipped() {
        let f = |x: &[f64]| Evaluation {
            value: x[0].abs(),
            grad: vec![x[0].signum()],
            regime: vec![u8::from(x[0] < 0.0)],
        };
        let r = check(f, &[1e-6], DEFAULT_STEP);
        assert_eq!(r.skipped_kinks, 1);
        assert_eq!(r.checked, 0);
    }

    #[test]
    fn grpo_objective_gradient() {
        let v = 8;
        let old = ToyPolicy::random(v, 11, 1.0);
        let reference = ToyPolicy::random(v, 12, 1.0);
        let start = ToyPolicy::random(v, 13, 1.0);
        let trajs = vec![
            TokenizedTrajectory::new(
                vec![1, 2, 3, 4, 5],
                vec![Policy, Policy, Critic, Critic, Policy],
            )
            .unwrap(),
            TokenizedTrajectory::new(vec![0, 7, 7, 2], vec![Policy, Policy, Policy, Policy])
                .unwrap(),
            TokenizedTrajectory::new(vec![6, 5, 4], vec![Policy, Critic, Policy]).unwrap(),
        ];
        let g = GroupRollouts::new("q", trajs, vec![0.1, 0.7, 0.4]).unwrap();
        let adv = compute_advantages(&g, 2.0).unwrap();
        let teacher = observed_teacher(&g, v);
        let hyper = Hyper {
            epsilon: 0.2,
            beta: 0.05,
            gamma: 0.1,
            clip_bound: 2.0,
        };
        let f = |x: &[f64]| {
            let mut p = start.clone();
            p.logits.copy_from_slice(x);
            let o = objective(&p, &old, &reference, &g, &adv, &teacher, hyper).unwrap();
            Evaluation {
                value: o.breakdown.total,
                grad: o.grad,
                regime: o.regime,
            }
        };
        let r = check(f, &start.logits, DEFAULT_STEP);
        assert!(r.checked > 60);
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }
}
