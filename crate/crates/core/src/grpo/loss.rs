//! Clipped surrogate with token-wise KL, feedback distillation, and their
//! analytic gradients with respect to the toy policy's logits.

use serde::{Deserialize, Serialize};

use super::advantage::{AdvantageTensor, GroupRollouts};
use super::policy::ToyPolicy;
use super::GrpoError;
use crate::traj::TokenOrigin;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub epsilon: f64,
    pub beta: f64,
    pub gamma: f64,
    pub clip_bound: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            epsilon: 0.2,
            beta: 0.01,
            gamma: 0.1,
            clip_bound: 2.0,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(GrpoError::InvalidConfig(format!(
                "epsilon {} outside (0,1)",
                self.epsilon
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(GrpoError::InvalidConfig(format!("beta {}", self.beta)));
        }
        check_gamma(self.gamma)?;
        if !(self.clip_bound > 0.0 && self.clip_bound.is_finite()) {
            return Err(GrpoError::InvalidConfig(format!(
                "clip bound {}",
                self.clip_bound
            )));
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<(), GrpoError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(GrpoError::InvalidConfig(format!(
            "gamma {gamma} outside [0,1]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossBreakdown {
    /// Normalized clipped surrogate.
    pub surrogate: f64,
    /// Normalized token-wise KL to the reference policy.
    pub kl: f64,
    pub distill: f64,
    /// `-(surrogate - beta * kl) + gamma * distill`.
    pub total: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub gamma: f64,
    pub clip_bound: f64,
}

/// Teacher distributions for the critic positions of each trajectory, in
/// position order.
pub type TeacherDistributions = Vec<Vec<Vec<f64>>>;

/// One-hot teachers on the observed critic tokens (the teacher-forced
/// cross-entropy form of the distillation loss).
pub fn observed_teacher(group: &GroupRollouts, vocab_size: usize) -> TeacherDistributions {
    group
        .trajectories
        .iter()
        .map(|t| {
            t.tokens
                .iter()
                .zip(&t.origins)
                .filter(|(_, o)| **o == TokenOrigin::Critic)
                .map(|(&tok, _)| {
                    let mut d = vec![0.0; vocab_size];
                    d[tok] = 1.0;
                    d
                })
                .collect()
        })
        .collect()
}

/// Loss value, gradient and the branch taken by every clipped term.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub breakdown: LossBreakdown,
    pub grad: Vec<f64>,
    /// Per policy position: 0 on the ratio branch, 1 on the clipped branch.
    pub regime: Vec<u8>,
}

fn check_shapes(
    policy: &ToyPolicy,
    others: &[&ToyPolicy],
    group: &GroupRollouts,
    adv: &AdvantageTensor,
) -> Result<(), GrpoError> {
    policy.validate()?;
    for o in others {
        if o.vocab_size != policy.vocab_size || o.logits.len() != policy.logits.len() {
            return Err(GrpoError::Misaligned(
                "policies do not share a vocabulary".into(),
            ));
        }
    }
    group.validate()?;
    if adv.per_token.len() != group.trajectories.len()
        || adv
            .per_token
            .iter()
            .zip(&group.trajectories)
            .any(|(a, t)| a.len() != t.len())
    {
        return Err(GrpoError::Misaligned(
            "advantages not aligned with tokens".into(),
        ));
    }
    for t in &group.trajectories {
        if let Some(&bad) = t.tokens.iter().find(|&&x| x >= policy.vocab_size) {
            return Err(GrpoError::Misaligned(format!(
                "token id {bad} outside vocabulary"
            )));
        }
    }
    Ok(())
}

fn finite_log(lp: f64, trajectory: usize, position: usize) -> Result<f64, GrpoError> {
    if lp.is_finite() {
        Ok(lp)
    } else {
        Err(GrpoError::NumericalUnderflow {
            trajectory,
            position,
        })
    }
}

/// Evaluate the total objective and its gradient in one pass.
pub fn objective(
    policy: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    group: &GroupRollouts,
    adv: &AdvantageTensor,
    teacher: &TeacherDistributions,
    hyper: Hyper,
) -> Result<Objective, GrpoError> {
    hyper.validate()?;
    check_shapes(policy, &[old, reference], group, adv)?;
    let v = policy.vocab_size;
    let lp_theta = policy.log_prob_table();
    let lp_old = old.log_prob_table();
    let lp_ref = reference.log_prob_table();
    let n = group.total_tokens().max(1) as f64;
    let (lo, hi) = (1.0 - hyper.epsilon, 1.0 + hyper.epsilon);

    let mut g_surr = vec![0.0; policy.logits.len()];
    let mut g_kl = vec![0.0; policy.logits.len()];
    let mut g_dist = vec![0.0; policy.logits.len()];
    let (mut surr, mut kl, mut dist) = (0.0, 0.0, 0.0);
    let mut critic_positions = 0usize;
    let mut regime = Vec::new();

    for (i, traj) in group.trajectories.iter().enumerate() {
        let teach = teacher.get(i).map(Vec::as_slice).unwrap_or(&[]);
        let mut critic_k = 0;
        let contexts = policy.contexts(&traj.tokens, &traj.origins);
        for (t, (&tok, origin)) in traj.tokens.iter().zip(&traj.origins).enumerate() {
            let ctx = contexts[t];
            let lp = &lp_theta[ctx];
            let row = ctx * v;
            match origin {
                TokenOrigin::Policy => {
                    let a = adv.per_token[i][t];
                    let l_new = finite_log(lp[tok], i, t)?;
                    let l_old = finite_log(lp_old[ctx][tok], i, t)?;
                    let r = (l_new - l_old).exp();
                    let term = (r * a).min(r.clamp(lo, hi) * a);
                    surr += term;
                    let on_ratio_branch = (a > 0.0 && r < hi) || (a < 0.0 && r > lo);
                    regime.push(u8::from(a != 0.0 && !on_ratio_branch));
                    if on_ratio_branch {
                        // d term / d log p = a r ; d log p(tok) / d z_u = 1[u=tok] - p_u
                        let c = a * r;
                        for u in 0..v {
                            g_surr[row + u] -= c * lp[u].exp();
                        }
                        g_surr[row + tok] += c;
                    }
                    let q = &lp_ref[ctx];
                    let kl_t: f64 = (0..v).map(|u| lp[u].exp() * (lp[u] - q[u])).sum();
                    kl += kl_t;
                    for u in 0..v {
                        g_kl[row + u] += lp[u].exp() * (lp[u] - q[u] - kl_t);
                    }
                }
                TokenOrigin::Critic => {
                    let Some(tdist) = teach.get(critic_k) else {
                        return Err(GrpoError::Misaligned(format!(
                            "no teacher distribution for critic position {t} of trajectory {i}"
                        )));
                    };
                    critic_k += 1;
                    critic_positions += 1;
                    let mut d = 0.0;
                    for u in 0..v {
                        if tdist[u] > 0.0 {
                            d += tdist[u] * (tdist[u].ln() - finite_log(lp[u], i, t)?);
                        }
                        g_dist[row + u] += lp[u].exp() - tdist[u];
                    }
                    dist += d;
                }
            }
        }
    }

    let surrogate = surr / n;
    let kl = kl / n;
    let m = critic_positions.max(1) as f64;
    let distill = if critic_positions == 0 { 0.0 } else { dist / m };
    let total = -(surrogate - hyper.beta * kl) + hyper.gamma * distill;
    let grad = (0..policy.logits.len())
        .map(|k| -(g_surr[k] / n - hyper.beta * g_kl[k] / n) + hyper.gamma * g_dist[k] / m)
        .collect();
    Ok(Objective {
        breakdown: LossBreakdown {
            surrogate,
            kl,
            distill,
            total,
            epsilon: hyper.epsilon,
            beta: hyper.beta,
            gamma: hyper.gamma,
            clip_bound: hyper.clip_bound,
        },
        grad,
        regime,
    })
}

/// Surrogate and KL terms only (no distillation).
pub fn grpo_surrogate(
    policy: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    group: &GroupRollouts,
    adv: &AdvantageTensor,
    epsilon: f64,
    beta: f64,
) -> Result<LossBreakdown, GrpoError> {
    let teacher = observed_teacher(group, policy.vocab_size);
    let hyper = Hyper {
        epsilon,
        beta,
        gamma: 0.0,
        clip_bound: adv.clip_bound,
    };
    let mut b = objective(policy, old, reference, group, adv, &teacher, hyper)?.breakdown;
    b.distill = 0.0;
    b.total = -(b.surrogate - beta * b.kl);
    Ok(b)
}

/// Mean over critic positions of `KL(teacher || policy)`; 0 without critic
/// tokens.
pub fn distill_loss(
    policy: &ToyPolicy,
    group: &GroupRollouts,
    teacher: &TeacherDistributions,
) -> Result<f64, GrpoError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, traj) in group.trajectories.iter().enumerate() {
        let mut k = 0;
        let contexts = policy.contexts(&traj.tokens, &traj.origins);
        for (t, origin) in traj.origins.iter().enumerate() {
            if *origin != TokenOrigin::Critic {
                continue;
            }
            let ctx = contexts[t];
            let lp = policy.log_probs(ctx);
            let td = teacher.get(i).and_then(|x| x.get(k)).ok_or_else(|| {
                GrpoError::Misaligned(format!("no teacher distribution for critic position {t}"))
            })?;
            k += 1;
            count += 1;
            for u in 0..policy.vocab_size {
                if td[u] > 0.0 {
                    sum += td[u] * (td[u].ln() - finite_log(lp[u], i, t)?);
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// `-(surrogate - beta * kl) + gamma * distill`.
pub fn total_loss(breakdown: &LossBreakdown, gamma: f64) -> Result<f64, GrpoError> {
    check_gamma(gamma)?;
    Ok(-(breakdown.surrogate - breakdown.beta * breakdown.kl) + gamma * breakdown.distill)
}
