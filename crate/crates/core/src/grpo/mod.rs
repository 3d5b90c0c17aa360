//! Group-relative policy optimization on a toy character policy.

pub mod advantage;
pub mod gradcheck;
pub mod loss;
pub mod policy;

use thiserror::Error;

pub use advantage::{
    compute_advantages, compute_batch_advantages, AdvantageTensor, GroupRollouts,
    StandardizationScope, TokenizedTrajectory,
};
pub use loss::{
    distill_loss, grpo_surrogate, objective, observed_teacher, total_loss, Hyper, LossBreakdown,
    Objective, TeacherDistributions,
};
pub use policy::{CharVocab, ToyPolicy};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GrpoError {
    #[error("group needs at least 2 trajectories, got {0}")]
    GroupTooSmall(usize),
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("log-probability underflow at trajectory {trajectory}, position {position}")]
    NumericalUnderflow { trajectory: usize, position: usize },
}
