//! The generate, render, critique and revise loop.

pub mod collapse;
pub mod engine;
pub mod generators;
pub mod ports;

pub use collapse::{collapse_experiment, CollapseConfig, CollapseSeries};
pub use engine::{
    infer_critic_free, run_group, run_inference, run_trajectory, AcceptanceMode, AttemptRecord,
    EngineConfig, FailedTrajectory, GroupOutcome, InferenceMode, RolloutError, RolloutOutcome,
    RoundLog, Termination, DEFAULT_SELF_EDIT_CAP,
};
pub use generators::{
    DriftGenerator, FnGenerator, HttpGenerator, TemplateGenerator, ToyPolicyGenerator,
};
pub use ports::{
    AttemptContext, Counted, CriticPort, Decoding, GeneratorError, GeneratorPort, Ports,
    RendererPort, SandboxPort,
};
