//! Training and evaluation tooling for a front-end code generator that
//! revises its answers using a critic's feedback on the rendered page.
//!
//! Modules:
//!
//! * [`traj`] - trajectory data model and the reflection tag grammar.
//! * [`reward`] - vision-gated score, length penalty and their product.
//! * [`grpo`] - group-relative advantages, the clipped surrogate with
//!   critic-token masking, feedback distillation and a toy policy with exact
//!   gradients.
//! * [`rollout`] - the generate/render/critique loop with strict acceptance
//!   and the critic-free inference path.
//! * [`render`] - headless sandbox controller, validity checks and a
//!   deterministic mock renderer.
//! * [`critic`] - judge request/response handling and scripted mock critics.
//! * [`dedup`] - multi-view train/test de-duplication.
//! * [`train`] - a small end-to-end training run on the toy policy.
//! * [`config`], [`eval`], [`logs`], [`cli`] - command-line harness.

pub mod cli;
pub mod config;
pub mod critic;
pub mod dedup;
pub mod eval;
pub mod grpo;
pub mod html;
pub mod logs;
pub mod render;
pub mod reward;
pub mod rng;
pub mod rollout;
pub mod train;
pub mod traj;
