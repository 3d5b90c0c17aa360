//! The three collaborators of the rollout loop and their call counters.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::{CriticError, CriticResponse};
use crate::render::{
    enforce_validity, RenderError, RenderRequest, RenderResult, Renderer, ValidityPolicy,
};
use crate::reward::ScreenshotSet;
use crate::traj::Query;

/// Identifies one sampling attempt; ports derive any randomness from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttemptContext {
    pub trajectory_seed: u64,
    /// 1-based round.
    pub round: usize,
    /// 1-based attempt within the round.
    pub attempt: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            temperature: 1.0,
            top_p: 0.7,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("generator failed: {0}")]
pub struct GeneratorError(pub String);

pub trait GeneratorPort: Send + Sync {
    /// Produce the raw text of the next round given the composed history.
    fn generate(
        &self,
        ctx: &AttemptContext,
        history: &str,
        decoding: &Decoding,
    ) -> Result<String, GeneratorError>;
}

pub trait CriticPort: Send + Sync {
    /// Score and feedback for one rendered candidate, in a single call.
    fn critique(
        &self,
        ctx: &AttemptContext,
        query: &Query,
        code: &str,
        shots: &ScreenshotSet,
    ) -> Result<CriticResponse, CriticError>;
}

pub trait RendererPort: Send + Sync {
    fn render(&self, ctx: &AttemptContext, code: &str) -> Result<RenderResult, RenderError>;
}

macro_rules! forward_ports {
    ($($wrapper:ty),*) => {$(
        impl<T: GeneratorPort + ?Sized> GeneratorPort for $wrapper {
            fn generate(&self, ctx: &AttemptContext, history: &str, decoding: &Decoding) -> Result<String, GeneratorError> {
                (**self).generate(ctx, history, decoding)
            }
        }
        impl<T: CriticPort + ?Sized> CriticPort for $wrapper {
            fn critique(&self, ctx: &AttemptContext, query: &Query, code: &str, shots: &ScreenshotSet) -> Result<CriticResponse, CriticError> {
                (**self).critique(ctx, query, code, shots)
            }
        }
        impl<T: RendererPort + ?Sized> RendererPort for $wrapper {
            fn render(&self, ctx: &AttemptContext, code: &str) -> Result<RenderResult, RenderError> {
                (**self).render(ctx, code)
            }
        }
    )*};
}

forward_ports!(Arc<T>, Box<T>, &T);

/// Adapts a [`Renderer`] into a port: fills a request template with the code
/// and applies the validity policy to the result.
pub struct SandboxPort<R> {
    pub renderer: R,
    pub template: RenderRequest,
    pub validity: ValidityPolicy,
}

impl<R: Renderer> SandboxPort<R> {
    pub fn new(renderer: R) -> Self {
        SandboxPort {
            renderer,
            template: RenderRequest::new(String::new()),
            validity: ValidityPolicy::default(),
        }
    }
}

impl<R: Renderer> RendererPort for SandboxPort<R> {
    fn render(&self, _ctx: &AttemptContext, code: &str) -> Result<RenderResult, RenderError> {
        let mut req = self.template.clone();
        req.code_bundle = code.to_string();
        let r = self.renderer.render_and_capture(&req)?;
        Ok(enforce_validity(r, &self.validity))
    }
}

/// Wraps a port and counts invocations.
#[derive(Debug, Default)]
pub struct Counted<P> {
    pub inner: P,
    calls: AtomicUsize,
}

impl<P> Counted<P> {
    pub fn new(inner: P) -> Self {
        Counted {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn tick(&self) {
        self.calls.fetch_add(1, Ordering::SeqCst);
    }
}

impl<P: GeneratorPort> GeneratorPort for Counted<P> {
    fn generate(
        &self,
        ctx: &AttemptContext,
        history: &str,
        decoding: &Decoding,
    ) -> Result<String, GeneratorError> {
        self.tick();
        self.inner.generate(ctx, history, decoding)
    }
}

impl<P: CriticPort> CriticPort for Counted<P> {
    fn critique(
        &self,
        ctx: &AttemptContext,
        query: &Query,
        code: &str,
        shots: &ScreenshotSet,
    ) -> Result<CriticResponse, CriticError> {
        self.tick();
        self.inner.critique(ctx, query, code, shots)
    }
}

impl<P: RendererPort> RendererPort for Counted<P> {
    fn render(&self, ctx: &AttemptContext, code: &str) -> Result<RenderResult, RenderError> {
        self.tick();
        self.inner.render(ctx, code)
    }
}

/// The ports one rollout talks to.
#[derive(Clone, Copy)]
pub struct Ports<'a> {
    pub generator: &'a dyn GeneratorPort,
    pub critic: &'a dyn CriticPort,
    pub renderer: &'a dyn RendererPort,
}
