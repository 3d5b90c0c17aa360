//! Builds the generator, critic and renderer a command talks to.

use std::path::{Path, PathBuf};
use std::time::Duration;

use super::CliError;
use crate::config::{GeneratorMock, RunConfig};
use crate::critic::{CriticError, HttpCritic, MockCritic};
use crate::render::mock::MockRenderer;
use crate::render::{RenderError, RenderResult};
use crate::reward::ScreenshotSet;
use crate::rollout::{
    AttemptContext, CriticPort, DriftGenerator, GeneratorPort, HttpGenerator, RendererPort,
    SandboxPort, TemplateGenerator,
};

pub fn build_generator(cfg: &RunConfig) -> Box<dyn GeneratorPort> {
    let g = &cfg.generator;
    if let Some(url) = &g.endpoint {
        return Box::new(HttpGenerator::new(
            url.clone(),
            g.model.clone(),
            g.api_key.clone(),
            Duration::from_millis(g.timeout_ms),
            g.max_in_flight,
        ));
    }
    match g.mock {
        GeneratorMock::Template { request_until } => Box::new(TemplateGenerator { request_until }),
        GeneratorMock::Drift {
            seed,
            initial_mean,
            initial_sd,
            drift,
            step_sd,
        } => Box::new(DriftGenerator {
            seed,
            initial_mean,
            initial_sd,
            drift,
            step_sd,
        }),
    }
}

/// The HTTP judge when an endpoint is configured, otherwise the mock script.
pub fn build_critic(
    cfg: &RunConfig,
    transcript: Option<PathBuf>,
) -> Result<Box<dyn CriticPort>, CliError> {
    match cfg.critic.http_config(transcript) {
        Some(h) => HttpCritic::new(h)
            .map(|c| Box::new(c) as Box<dyn CriticPort>)
            .map_err(|e| match e {
                CriticError::UnknownRubric(_) => CliError::Validation(e.to_string()),
                _ => CliError::Infrastructure(e.to_string()),
            }),
        None => Ok(Box::new(MockCritic::new(cfg.critic.load_mock()?))),
    }
}

pub fn build_renderer(cfg: &RunConfig) -> Result<Box<dyn RendererPort>, CliError> {
    let mut template = cfg.render_template();
    template.policy = cfg.network_policy()?;
    match &cfg.sandbox.browser_executable {
        None => {
            let mut port = SandboxPort::new(MockRenderer::default());
            port.template = template;
            port.validity = cfg.validity();
            Ok(Box::new(port))
        }
        Some(exe) => browser(cfg, exe, template),
    }
}

#[cfg(feature = "browser")]
fn browser(
    cfg: &RunConfig,
    exe: &str,
    template: crate::render::RenderRequest,
) -> Result<Box<dyn RendererPort>, CliError> {
    use crate::render::cdp::ws::{BrowserProcess, WsConnector};
    use crate::render::cdp::CdpRenderer;
    use crate::render::{RenderPool, Renderer};

    struct Browser {
        _process: BrowserProcess,
        port: SandboxPort<RenderPool>,
    }
    impl RendererPort for Browser {
        fn render(&self, ctx: &AttemptContext, code: &str) -> Result<RenderResult, RenderError> {
            self.port.render(ctx, code)
        }
    }

    let guard = match &cfg.sandbox.guard_script {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| {
            CliError::Validation(format!("sandbox.guard_script {}: {e}", p.display()))
        })?),
        None => None,
    };
    let process =
        BrowserProcess::launch(exe, &[]).map_err(|e| CliError::Infrastructure(e.to_string()))?;
    let contexts = (0..cfg.sandbox.pool_size)
        .map(|_| {
            let r = CdpRenderer::new(Box::new(WsConnector {
                url: process.ws_url.clone(),
            }));
            let r = match &guard {
                Some(src) => r.with_guard_source(src.clone()),
                None => r,
            };
            Box::new(r) as Box<dyn Renderer>
        })
        .collect();
    let mut port = SandboxPort::new(RenderPool::new(contexts));
    port.template = template;
    port.validity = cfg.validity();
    Ok(Box::new(Browser {
        _process: process,
        port,
    }))
}

#[cfg(not(feature = "browser"))]
fn browser(
    _: &RunConfig,
    _: &str,
    _: crate::render::RenderRequest,
) -> Result<Box<dyn RendererPort>, CliError> {
    Err(CliError::Validation("sandbox.browser_executable is set but this build has no browser support (feature `browser`)".into()))
}

/// Writes every capture to `{root}/{seed}/round{r}/attempt{a}/S{k}.png`.
pub struct SavingRenderer<'a> {
    pub inner: &'a dyn RendererPort,
    pub root: PathBuf,
}

impl RendererPort for SavingRenderer<'_> {
    fn render(&self, ctx: &AttemptContext, code: &str) -> Result<RenderResult, RenderError> {
        let r = self.inner.render(ctx, code)?;
        save(&self.root, ctx, &r.shots)?;
        Ok(r)
    }
}

fn save(root: &Path, ctx: &AttemptContext, shots: &ScreenshotSet) -> std::io::Result<()> {
    if shots.captures.is_empty() {
        return Ok(());
    }
    let dir = root
        .join(format!("{:016x}", ctx.trajectory_seed))
        .join(format!("round{}", ctx.round))
        .join(format!("attempt{}", ctx.attempt));
    std::fs::create_dir_all(&dir)?;
    for (i, c) in shots.captures.iter().enumerate() {
        std::fs::write(dir.join(format!("S{}.png", i + 1)), &c.png)?;
    }
    Ok(())
}
