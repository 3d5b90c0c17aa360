//! Acceptance harness: one PASS/FAIL line per criterion, with the measured
//! values and the tolerance each was held to.
//!
//! Run with `cargo test -p relook-core --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::Rng;

use common::*;
use relook_core::config::RunConfig;
use relook_core::critic::MockCritic;
use relook_core::dedup::{
    brute_force_ted, dedup_corpus, tree_edit_distance, Decision, DedupConfig,
};
use relook_core::grpo::gradcheck::{check, Evaluation, DEFAULT_STEP};
use relook_core::grpo::{
    compute_advantages, grpo_surrogate, objective, observed_teacher, GroupRollouts, Hyper,
    TokenizedTrajectory, ToyPolicy,
};
use relook_core::render::mock::MockRenderer;
use relook_core::render::{
    enforce_validity, RenderRequest, Renderer, ValidityPolicy, ValidityReason,
};
use relook_core::reward::{
    gate, length_penalty, visual_gate, LengthBounds, ScreenshotSet, CAPTURES_PER_ROUND,
};
use relook_core::rng::{derive_seed, rng_for};
use relook_core::rollout::{
    collapse_experiment, run_inference, run_trajectory, AcceptanceMode, CollapseSeries, Counted,
    EngineConfig, FnGenerator, InferenceMode, Ports, SandboxPort, TemplateGenerator, Termination,
    DEFAULT_SELF_EDIT_CAP,
};
use relook_core::train::train_demo;
use relook_core::traj::{Query, TokenOrigin};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(
        elapsed < limit,
        format!(
            "runtime {:.2}s over {:.0}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- reward

fn reward_math() -> Outcome {
    let start = Instant::now();
    let b = LengthBounds::default();
    for (len, want) in [
        (11_000, 1.0),
        (13_000, 0.5),
        (14_001, 0.0),
        (12_000, 1.0),
        (14_000, 0.0),
    ] {
        let got = length_penalty(len, b);
        ensure(got == want, format!("penalty({len}) = {got}, want {want}"))?;
    }
    let cap = relook_core::render::Capture::solid(4, 4, [0, 0, 0, 255]);
    let caps = vec![cap.clone(), cap.clone(), cap];
    let invalid = ScreenshotSet::new(caps.clone(), vec![0, 1000, 2000], false);
    let valid = ScreenshotSet::new(caps, vec![0, 1000, 2000], true);
    ensure(
        visual_gate(0.93, &invalid) == Ok(0.0),
        "invalid screenshots must gate to 0",
    )?;

    let mut rng = rng_for(1);
    for _ in 0..1000 {
        let l_start = rng.random_range(1..20_000usize);
        let l_end = l_start + rng.random_range(1..10_000usize);
        let bounds = LengthBounds::new(l_start, l_end).unwrap();
        let len = rng.random_range(0..40_000usize);
        // independent closed form
        let want = ((l_end as f64 - len as f64) / (l_end - l_start) as f64).clamp(0.0, 1.0);
        let got = length_penalty(len, bounds);
        ensure(
            (got - want).abs() < 1e-12,
            format!("penalty({len}; {l_start}, {l_end}) = {got}, want {want}"),
        )?;
        ensure(
            length_penalty(len + 1, bounds) <= got,
            "penalty not monotone",
        )?;
        let s: f64 = rng.random_range(0.0..=1.0);
        ensure(
            visual_gate(s, &valid) == Ok(s) && gate(s, false) == Ok(0.0),
            "gate",
        )?;
    }
    let t = start.elapsed();
    within(t, Duration::from_secs(5))?;
    Ok(format!(
        "1000 cases + 5 pinned points exact; {:.3}s < 5s",
        t.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- grpo

fn random_trajectory<R: Rng>(rng: &mut R, vocab: usize) -> TokenizedTrajectory {
    let n = rng.random_range(3..10);
    let mut tokens = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);
    let critic_from = rng.random_range(1..n);
    let critic_to = rng.random_range(critic_from..=n);
    for i in 0..n {
        tokens.push(rng.random_range(0..vocab));
        origins.push(if (critic_from..critic_to).contains(&i) {
            TokenOrigin::Critic
        } else {
            TokenOrigin::Policy
        });
    }
    TokenizedTrajectory::new(tokens, origins).unwrap()
}

fn random_group<R: Rng>(rng: &mut R, vocab: usize, size: usize) -> GroupRollouts {
    let trajs = (0..size).map(|_| random_trajectory(rng, vocab)).collect();
    let returns = (0..size).map(|_| rng.random_range(0.0..1.0)).collect();
    GroupRollouts::new("q", trajs, returns).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let (mut checked, mut kinks) = (0, 0);
    for case in 0..50u64 {
        let mut rng = rng_for(derive_seed(77, &[case]));
        let v = rng.random_range(3..=8);
        let g = random_group(&mut rng, v, 3);
        let hyper = Hyper {
            epsilon: 0.2,
            beta: rng.random_range(0.0..0.05),
            gamma: rng.random_range(0.0..0.3),
            clip_bound: [1.0, 2.0, 3.0][case as usize % 3],
        };
        let adv = compute_advantages(&g, hyper.clip_bound).map_err(|e| e.to_string())?;
        let teacher = observed_teacher(&g, v);
        let old = ToyPolicy::random(v, derive_seed(case, &[1]), 1.0);
        let reference = ToyPolicy::random(v, derive_seed(case, &[2]), 1.0);
        let start_p = ToyPolicy::random(v, derive_seed(case, &[3]), 1.0);
        let f = |x: &[f64]| {
            let mut p = start_p.clone();
            p.logits.copy_from_slice(x);
            let o = objective(&p, &old, &reference, &g, &adv, &teacher, hyper).unwrap();
            Evaluation {
                value: o.breakdown.total,
                grad: o.grad,
                regime: o.regime,
            }
        };
        let r = check(f, &start_p.logits, DEFAULT_STEP);
        worst = worst.max(r.max_relative_error);
        checked += r.checked;
        kinks += r.skipped_kinks;
    }
    let t = start.elapsed();
    ensure(
        worst < 1e-4,
        format!("max relative error {worst:.2e} >= 1e-4"),
    )?;
    within(t, Duration::from_secs(60))?;
    Ok(format!(
        "50 policies, {checked} coordinates, max rel err {worst:.2e} < 1e-4 ({kinks} kink coords skipped); {:.2}s < 60s",
        t.as_secs_f64()
    ))
}

fn masking_invariance() -> Outcome {
    let mut checked = 0;
    for case in 0..100u64 {
        let mut rng = rng_for(derive_seed(91, &[case]));
        let v = 8;
        let g = random_group(&mut rng, v, 4);
        let mut m = g.clone();
        for t in &mut m.trajectories {
            for (tok, o) in t.tokens.iter_mut().zip(&t.origins) {
                if *o == TokenOrigin::Critic {
                    *tok = rng.random_range(0..v);
                }
            }
        }
        let (p, old, r) = (
            ToyPolicy::random(v, case, 1.0),
            ToyPolicy::random(v, case + 1000, 1.0),
            ToyPolicy::random(v, case + 2000, 1.0),
        );
        let (a, b) = (
            compute_advantages(&g, 2.0).unwrap(),
            compute_advantages(&m, 2.0).unwrap(),
        );
        let bits = |x: &[Vec<f64>]| x.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(
            bits(&a.per_token) == bits(&b.per_token),
            format!("case {case}: advantages moved"),
        )?;
        let sa = grpo_surrogate(&p, &old, &r, &g, &a, 0.2, 0.01).unwrap();
        let sb = grpo_surrogate(&p, &old, &r, &m, &b, 0.2, 0.01).unwrap();
        ensure(
            sa.surrogate.to_bits() == sb.surrogate.to_bits() && sa.kl.to_bits() == sb.kl.to_bits(),
            format!("case {case}: surrogate moved"),
        )?;
        checked += g.trajectories.len();
    }
    Ok(format!(
        "100 groups ({checked} trajectories), advantages and surrogate bit-identical"
    ))
}

// ---------------------------------------------------------------- rollout

fn forced_optimization() -> Outcome {
    let g = TemplateGenerator::always();
    // a coarse grid makes ties common
    let c = MockCritic::function(|ctx, _| {
        let mut r = rng_for(derive_seed(
            ctx.trajectory_seed,
            &[ctx.round as u64, ctx.attempt as u64],
        ));
        r.random_range(0..=10) as f64 / 10.0
    });
    let renderer = SandboxPort::new(MockRenderer::default());
    let cfg = EngineConfig {
        group_size: 1,
        max_rounds: 5,
        max_resamples: 10,
        acceptance: AcceptanceMode::Forced,
        ..Default::default()
    };
    let (mut ties, mut exhausted) = (0, 0);
    for seed in 0..1000u64 {
        let q = Query::new("q", "Build a landing page").unwrap();
        let o = run_trajectory(
            &q,
            Ports {
                generator: &g,
                critic: &c,
                renderer: &renderer,
            },
            &cfg,
            seed,
        )
        .map_err(|e| e.to_string())?;
        ensure(
            o.gated_scores.windows(2).all(|w| w[1] > w[0]),
            format!("seed {seed}: kept scores not strictly increasing"),
        )?;
        let mut best = -1.0f64;
        for round in &o.acceptance_log {
            ensure(
                round.attempts_used <= 10 && round.attempts.len() == round.attempts_used,
                format!("seed {seed}: attempts over K"),
            )?;
            for a in &round.attempts {
                if a.score == best {
                    ties += 1;
                    ensure(!a.accepted, format!("seed {seed}: equal score accepted"))?;
                }
                ensure(
                    a.accepted == (a.score > best),
                    format!("seed {seed}: acceptance rule"),
                )?;
            }
            if round.accepted {
                best = best.max(round.attempts.last().unwrap().score);
            }
        }
        if o.termination == Termination::ResampleExhausted {
            exhausted += 1;
            let max = o.gated_scores.iter().copied().fold(0.0, f64::max);
            ensure(
                o.best_score == max && o.gated_scores.last() == Some(&max),
                format!("seed {seed}: exhaustion lost the best"),
            )?;
            ensure(
                o.acceptance_log
                    .last()
                    .is_some_and(|r| r.attempts_used == 10),
                "exhaustion before K",
            )?;
        }
    }
    ensure(
        ties > 0 && exhausted > 0,
        "fixture produced no ties or no exhaustion",
    )?;
    Ok(format!("1000 trajectories strictly increasing; {ties} ties all rejected; {exhausted} exhaustions kept best-so-far; K <= 10"))
}

fn collapse() -> Outcome {
    let start = Instant::now();
    let c = RunConfig::default().collapse;
    let g = c.generator();
    let critic = MockCritic::new(c.critic());
    let r = SandboxPort::new(MockRenderer::default());
    let ports = Ports {
        generator: &g,
        critic: &critic,
        renderer: &r,
    };
    let q = [Query::new("collapse", "Build a landing page for a bakery").unwrap()];
    let on = collapse_experiment(&q, true, ports, &c.experiment()).map_err(|e| e.to_string())?;
    let off = collapse_experiment(&q, false, ports, &c.experiment()).map_err(|e| e.to_string())?;
    let monotone = on
        .runs
        .iter()
        .filter(|r| CollapseSeries::run_is_monotone(r))
        .count();
    let t = start.elapsed();
    ensure(
        on.runs.len() >= 100 && on.mean.len() == 8,
        "need 8 rounds over >= 100 seeds",
    )?;
    ensure(
        monotone == on.runs.len(),
        format!("acceptance on: {monotone}/{} runs monotone", on.runs.len()),
    )?;
    ensure(
        !off.mean_regressions.is_empty(),
        "acceptance off: mean series never regresses",
    )?;
    within(t, Duration::from_secs(120))?;
    Ok(format!(
        "{} seeds x 8 rounds; on monotone {monotone}/{} (mean {:.3} -> {:.3}); off mean regresses at rounds {:?} ({:.3} -> {:.3}), {:.0}% of runs regress; {:.2}s < 120s",
        on.runs.len(),
        on.runs.len(),
        on.mean[0],
        on.mean[7],
        off.mean_regressions,
        off.mean[0],
        off.mean[7],
        100.0 * off.regression_rate(),
        t.as_secs_f64()
    ))
}

fn toy_policy_improvement() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::default().train_demo();
    let report = train_demo(&cfg).map_err(|e| e.to_string())?;
    let gain = report.improvement();
    let t = start.elapsed();
    // ablation readout for the log only
    let mut rl_only = cfg.clone();
    rl_only.hyper.gamma = 0.0;
    let ablation = train_demo(&rl_only)
        .map(|r| r.improvement())
        .unwrap_or(f64::NAN);
    ensure(report.steps.len() == 20, "expected 20 steps")?;
    ensure(gain >= 2.0, format!("improvement {gain:.2}x < 2x"))?;
    within(t, Duration::from_secs(300))?;
    Ok(format!(
        "readout {:.6} -> {:.6} = {gain:.1}x >= 2x over 20 steps (no distillation: {ablation:.1}x); {:.2}s < 300s",
        report.initial_readout,
        report.final_readout,
        t.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- dedup

fn dedup_protocol() -> Outcome {
    let o = oracle("dedup_oracle.json");
    let words = oracle_words(&o);
    let mut parts = Vec::new();

    // fixture corpus: recall of exact copies and the frozen removal set
    let v: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(fixture("oracles/dedup_corpus.json")).unwrap(),
    )
    .unwrap();
    let load = |k: &str| {
        v[k].as_array()
            .unwrap()
            .iter()
            .map(|d| prompt_only(d["id"].as_str().unwrap(), d["prompt"].as_str().unwrap()))
            .collect::<Vec<_>>()
    };
    let out = dedup_corpus(&load("train"), &load("test"), &DedupConfig::default());
    let removed: BTreeSet<&str> = out.removed.iter().map(|r| r.id.as_str()).collect();
    let exact: Vec<&str> = v["planted"]["exact"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_str().unwrap())
        .collect();
    let recall =
        exact.iter().filter(|id| removed.contains(*id)).count() as f64 / exact.len() as f64;
    ensure(recall == 1.0, format!("exact-copy recall {recall}"))?;
    let want: BTreeSet<&str> = o["corpus"]["fixture_removed"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_str().unwrap())
        .collect();
    ensure(
        removed == want,
        "fixture removals differ from the reference",
    )?;
    parts.push(format!("exact recall {recall:.1}"));

    // Monte-Carlo detection rates against the frozen predictions
    let pair_pred = o["pair"]["detection_rate"].as_f64().unwrap();
    let pair = mc_pair_rate(2024, 1000, &words, 0.05, 0.85);
    ensure(
        (pair - pair_pred).abs() <= 0.03,
        format!("pair rate {pair:.3} vs {pair_pred:.3}"),
    )?;
    parts.push(format!("pair rate {pair:.3} vs {pair_pred:.3} (+-0.03)"));
    for (rate, key) in [
        (0.05, "predicted_near_rate"),
        (
            o["corpus"]["calibration_edit_rate"].as_f64().unwrap(),
            "calibration_predicted_near_rate",
        ),
    ] {
        let pred = o["corpus"][key].as_f64().unwrap();
        let (got, _) = mc_near_rate(31, 5, &words, rate);
        ensure(
            (got - pred).abs() <= 0.03,
            format!("corpus rate at {rate}: {got:.3} vs {pred:.3}"),
        )?;
        parts.push(format!(
            "corpus rate @{:.0}% {got:.3} vs {pred:.3} (+-0.03)",
            rate * 100.0
        ));
    }

    // tree edit distance against exhaustive search
    let mut rng = rng_for(5);
    for _ in 0..300 {
        let (n, m) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let (a, b) = (random_tree(&mut rng, n), random_tree(&mut rng, m));
        let (fast, slow) = (tree_edit_distance(&a, &b), brute_force_ted(&a, &b));
        ensure(
            fast == slow,
            format!("ted {fast} vs brute force {slow} ({n} vs {m} nodes)"),
        )?;
    }
    parts.push("ted = brute force on 300 pairs <= 12 nodes".into());

    // pruning never drops a pair that could matter
    for seed in 0..3 {
        let (train, test) = mixed_corpus(seed, &words, 100, 300);
        let fast = dedup_corpus(&train, &test, &DedupConfig::default());
        let slow = dedup_corpus(
            &train,
            &test,
            &DedupConfig {
                exhaustive: true,
                ..Default::default()
            },
        );
        ensure(
            fast.kept == slow.kept && fast.removed == slow.removed && fast.review == slow.review,
            format!("seed {seed}: pruned outcome differs"),
        )?;
        let got: BTreeSet<(&str, &str)> = fast
            .pairs
            .iter()
            .map(|p| (p.a.as_str(), p.b.as_str()))
            .collect();
        let missing = slow
            .pairs
            .iter()
            .filter(|p| p.verdict.decision != Decision::Keep)
            .filter(|p| !got.contains(&(p.a.as_str(), p.b.as_str())))
            .count();
        ensure(
            missing == 0,
            format!("seed {seed}: {missing} flagged pairs pruned"),
        )?;
        ensure(
            slow.removed.len() > 10,
            "mixed corpus planted too few duplicates",
        )?;
    }
    parts.push("pruned = exhaustive on 3 corpora of 400".into());
    Ok(parts.join("; "))
}

// ---------------------------------------------------------------- inference

fn critic_free_purity() -> Outcome {
    let queries = queries();
    let critic = Counted::new(MockCritic::sequence(&[]));
    let renderer = Counted::new(SandboxPort::new(MockRenderer::default()));
    let always = TemplateGenerator::always();
    let coin = FnGenerator::new(|ctx, _| {
        let more = rng_for(derive_seed(ctx.trajectory_seed, &[ctx.round as u64])).random_bool(0.6);
        format!(
            "<answer><p>round {}</p></answer>{}",
            ctx.round,
            if more { " <get_feedback>" } else { "" }
        )
    });
    let mut longest = 0;
    let mut runs = 0;
    for q in &queries {
        for (gi, g) in [&always as &dyn relook_core::rollout::GeneratorPort, &coin]
            .into_iter()
            .enumerate()
        {
            for seed in 0..5u64 {
                let t = run_inference(
                    q,
                    Ports {
                        generator: g,
                        critic: &critic,
                        renderer: &renderer,
                    },
                    &EngineConfig::default(),
                    &InferenceMode::CriticFree {
                        max_self_edits: DEFAULT_SELF_EDIT_CAP,
                    },
                    derive_seed(seed, &[gi as u64]),
                )
                .map_err(|e| e.to_string())?;
                longest = longest.max(t.rounds.len());
                runs += 1;
            }
        }
    }
    ensure(
        critic.calls() == 0 && renderer.calls() == 0,
        format!(
            "critic {} / renderer {} calls",
            critic.calls(),
            renderer.calls()
        ),
    )?;
    ensure(longest <= 3, format!("{longest} rounds"))?;
    Ok(format!(
        "{} queries, {runs} runs: critic_calls = renderer_calls = 0; max rounds {longest} <= 3",
        queries.len()
    ))
}

// ---------------------------------------------------------------- renderer

fn renderer_contract() -> Outcome {
    let cases = [
        ("timeout", "<body><p>spin</p><script>while(true){}</script></body>", ValidityReason::Timeout),
        ("blank", "<html><body></body></html>", ValidityReason::BlankCapture),
        (
            "fail-closed network",
            "<body><iframe src=\"https://app.example.com/\"></iframe><img src=\"https://cdn.example.com/hero.png\"></body>",
            ValidityReason::BlankCapture,
        ),
    ];
    let port = SandboxPort::new(MockRenderer::default());
    for (name, page, reason) in cases {
        let r = enforce_validity(
            MockRenderer::default()
                .render_and_capture(&RenderRequest::new(page))
                .map_err(|e| e.to_string())?,
            &ValidityPolicy::default(),
        );
        ensure(
            !r.is_valid() && r.reason == reason,
            format!("{name}: {:?}", r.reason),
        )?;
        if name == "fail-closed network" {
            ensure(
                r.blocked_requests.len() == 2,
                "blocked origins not reported",
            )?;
        }
        // downstream: a critic that would have scored 0.9 never gets asked
        let critic = Counted::new(MockCritic::function(|_, _| 0.9));
        let page = page.to_string();
        let g = FnGenerator::new(move |_, _| format!("<answer>{page}</answer>"));
        let o = run_trajectory(
            &Query::new("q", "Build a page").unwrap(),
            Ports {
                generator: &g,
                critic: &critic,
                renderer: &port,
            },
            &EngineConfig {
                group_size: 1,
                ..Default::default()
            },
            1,
        )
        .map_err(|e| e.to_string())?;
        ensure(
            o.reward.r_final == 0.0 && o.gated_scores == vec![0.0],
            format!("{name}: reward {}", o.reward.r_final),
        )?;
        ensure(critic.calls() == 0, format!("{name}: critic called"))?;
    }

    // exactly 0 or 3 captures, whatever happens
    let pages = [
        "<p>ok</p>",
        "<!-- sandbox:crash-after=0 --><p>x</p>",
        "<!-- sandbox:crash-after=1 --><p>x</p>",
        "<!-- sandbox:crash-after=2 --><p>x</p>",
        "<!-- sandbox:load-fail --><p>x</p>",
        "<!-- sandbox:guard-tamper --><p>x</p>",
        "<body><p>x</p><script>for(;;){}</script></body>",
        "<body><canvas></canvas><script>setInterval(() => Math.random(), 500)</script></body>",
        "",
    ];
    let mut seen = BTreeSet::new();
    for p in pages {
        let mut req = RenderRequest::new(p);
        if p.is_empty() {
            req.code_bundle = " ".into();
        }
        let r = match MockRenderer::default().render_and_capture(&req) {
            Ok(r) => enforce_validity(r, &ValidityPolicy::default()),
            Err(_) => continue,
        };
        let n = r.shots.captures.len();
        ensure(
            n == 0 || n == CAPTURES_PER_ROUND,
            format!("{n} captures for {p:?}"),
        )?;
        ensure(
            (n == CAPTURES_PER_ROUND) == r.is_valid(),
            "captures disagree with validity",
        )?;
        seen.insert(n);
    }
    ensure(seen.len() == 2, "expected both 0 and 3 capture outcomes")?;
    Ok(format!("timeout, blank, fail-closed network -> invalid, reward 0, critic not called; 0-or-3 captures over {} pages", pages.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("reward math", reward_math),
        ("grpo gradient fidelity", gradient_fidelity),
        ("masking invariance", masking_invariance),
        ("forced optimization", forced_optimization),
        ("behavioral collapse", collapse),
        ("toy policy improvement", toy_policy_improvement),
        ("dedup protocol", dedup_protocol),
        ("critic-free purity", critic_free_purity),
        ("renderer contract (mock)", renderer_contract),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<26} {detail}  [{secs:.2}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<26} {detail}  [{secs:.2}s]");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
