//! Group-relative advantages with critic-token masking.

use serde::{Deserialize, Serialize};

use super::GrpoError;
use crate::traj::TokenOrigin;

/// Below this spread a group is treated as degenerate.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Token ids of one trajectory and who wrote each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedTrajectory {
    pub tokens: Vec<usize>,
    pub origins: Vec<TokenOrigin>,
}

impl TokenizedTrajectory {
    pub fn new(tokens: Vec<usize>, origins: Vec<TokenOrigin>) -> Result<Self, GrpoError> {
        if tokens.len() != origins.len() {
            return Err(GrpoError::Misaligned(format!(
                "{} tokens vs {} origin tags",
                tokens.len(),
                origins.len()
            )));
        }
        Ok(TokenizedTrajectory { tokens, origins })
    }

    pub fn policy_only(tokens: Vec<usize>) -> Self {
        let origins = vec![TokenOrigin::Policy; tokens.len()];
        TokenizedTrajectory { tokens, origins }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollouts {
    pub query_id: String,
    pub trajectories: Vec<TokenizedTrajectory>,
    pub returns: Vec<f64>,
}

impl GroupRollouts {
    pub fn new(
        query_id: impl Into<String>,
        trajectories: Vec<TokenizedTrajectory>,
        returns: Vec<f64>,
    ) -> Result<Self, GrpoError> {
        let g = GroupRollouts {
            query_id: query_id.into(),
            trajectories,
            returns,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.trajectories.len() < 2 {
            return Err(GrpoError::GroupTooSmall(self.trajectories.len()));
        }
        if self.trajectories.len() != self.returns.len() {
            return Err(GrpoError::Misaligned(format!(
                "{} trajectories vs {} returns",
                self.trajectories.len(),
                self.returns.len()
            )));
        }
        if self.returns.iter().any(|r| !r.is_finite()) {
            return Err(GrpoError::NonFinite("returns".into()));
        }
        for t in &self.trajectories {
            if t.tokens.len() != t.origins.len() {
                return Err(GrpoError::Misaligned(
                    "token and origin lengths differ".into(),
                ));
            }
        }
        Ok(())
    }

    /// `sum_i |o_i|` over all tokens, critic tokens included.
    pub fn total_tokens(&self) -> usize {
        self.trajectories.iter().map(TokenizedTrajectory::len).sum()
    }
}

/// Whether the spread used for standardization is taken per group or over
/// every group processed together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizationScope {
    #[default]
    Group,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageTensor {
    /// Aligned with each trajectory's tokens.
    pub per_token: Vec<Vec<f64>>,
    /// Standardized, clipped scalar advantage per trajectory.
    pub per_trajectory: Vec<f64>,
    /// Returns minus the group mean.
    pub centered: Vec<f64>,
    pub degenerate: bool,
    pub scope: StandardizationScope,
    pub clip_bound: f64,
}

fn check_clip(clip_bound: f64) -> Result<(), GrpoError> {
    if !(clip_bound > 0.0 && clip_bound.is_finite()) {
        return Err(GrpoError::InvalidConfig(format!("clip bound {clip_bound}")));
    }
    Ok(())
}

fn centered(returns: &[f64]) -> Vec<f64> {
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    returns.iter().map(|r| r - mean).collect()
}

fn population_std(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

fn broadcast(group: &GroupRollouts, scalar: &[f64]) -> Vec<Vec<f64>> {
    group
        .trajectories
        .iter()
        .zip(scalar)
        .map(|(t, &a)| {
            t.origins
                .iter()
                .map(|o| if *o == TokenOrigin::Policy { a } else { 0.0 })
                .collect()
        })
        .collect()
}

fn finish(
    group: &GroupRollouts,
    centered: Vec<f64>,
    std: f64,
    clip_bound: f64,
    scope: StandardizationScope,
) -> AdvantageTensor {
    let degenerate = std < DEGENERATE_STD;
    let per_trajectory: Vec<f64> = if degenerate {
        vec![0.0; centered.len()]
    } else {
        centered
            .iter()
            .map(|c| (c / std).clamp(-clip_bound, clip_bound))
            .collect()
    };
    AdvantageTensor {
        per_token: broadcast(group, &per_trajectory),
        per_trajectory,
        centered,
        degenerate,
        scope,
        clip_bound,
    }
}

/// Center on the group mean, divide by the population standard deviation of
/// the centered returns, clip, broadcast to policy tokens.
pub fn compute_advantages(
    group: &GroupRollouts,
    clip_bound: f64,
) -> Result<AdvantageTensor, GrpoError> {
    group.validate()?;
    check_clip(clip_bound)?;
    let c = centered(&group.returns);
    let std = population_std(&c);
    Ok(finish(
        group,
        c,
        std,
        clip_bound,
        StandardizationScope::Group,
    ))
}

/// Advantages for several groups. Each group keeps its own mean as
/// baseline; with [`StandardizationScope::Batch`] the spread is pooled over
/// all centered returns of the batch.
pub fn compute_batch_advantages(
    groups: &[GroupRollouts],
    clip_bound: f64,
    scope: StandardizationScope,
) -> Result<Vec<AdvantageTensor>, GrpoError> {
    match scope {
        StandardizationScope::Group => groups
            .iter()
            .map(|g| compute_advantages(g, clip_bound))
            .collect(),
        StandardizationScope::Batch => {
            check_clip(clip_bound)?;
            for g in groups {
                g.validate()?;
            }
            let cs: Vec<Vec<f64>> = groups.iter().map(|g| centered(&g.returns)).collect();
            let pooled: Vec<f64> = cs.iter().flatten().copied().collect();
            let std = if pooled.is_empty() {
                0.0
            } else {
                population_std(&pooled)
            };
            Ok(groups
                .iter()
                .zip(cs)
                .map(|(g, c)| finish(g, c, std, clip_bound, scope))
                .collect())
        }
    }
}
