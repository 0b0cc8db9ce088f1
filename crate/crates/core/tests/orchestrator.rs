use std::sync::Arc;

use narrative_core::critic::CriticVariant;
use narrative_core::gateway::mock::FnProvider;
use narrative_core::gateway::{Gateway, ProviderError, ProviderLimits, RetryPolicy, ScriptedProvider};
use narrative_core::metrics::write_metrics_csv;
use narrative_core::orchestrator::store::RunDir;
use narrative_core::orchestrator::{
    batch_metrics, run_batch, run_instance, BaselineMode, Design, Instance, ModelBindings, ProblemCategory, RunConfig,
    RunError,
};
use narrative_core::prompt::RoleTag;
use narrative_core::simlab::provider::SimProvider;
use narrative_core::simlab::{render_templated_narrative, synth_corpus, FaultPlan, ReviserPolicy, SimCorpus};

fn sim_gateway(policy: ReviserPolicy) -> Gateway {
    Gateway::builder()
        .provider(Arc::new(SimProvider::new("sim", policy, 5)), ["sim"], ProviderLimits::default())
        .retry(RetryPolicy::immediate(1))
        .build()
}

fn config(design: Design, rounds: usize) -> RunConfig {
    let mut c = RunConfig::new(design, ModelBindings::uniform("sim"));
    c.max_rounds = rounds;
    c
}

fn corpus() -> SimCorpus {
    synth_corpus(9, 12, 6, 4, 8).unwrap()
}

fn instances(c: &SimCorpus) -> Vec<Instance<'_>> {
    c.cases
        .iter()
        .map(|k| Instance {
            table: &k.table,
            info: &c.info,
            baseline: Some(&k.baseline),
        })
        .collect()
}

#[tokio::test]
async fn single_sign_error_fixed_in_one_round() {
    let c = corpus();
    let case = &c.cases[0];
    let plan = FaultPlan {
        sign_flips: vec![case.table.rows[1].feature_name.clone()],
        ..FaultPlan::default()
    };
    let baseline = render_templated_narrative(&case.table, 4, &plan).unwrap();
    let gw = sim_gateway(ReviserPolicy::Compliant);
    let t = run_instance(&config(Design::Basic, 3), &gw, "r", &case.table, &c.info, Some(&baseline))
        .await
        .unwrap();
    assert_eq!(t.rounds.len(), 2);
    assert!(!t.rounds[0].is_faithful());
    assert!(t.rounds[1].is_faithful() && t.rounds[1].stop_flag);
    assert!(t.rounds[0].critic.is_none() && t.rounds[0].coherence.is_none());
    t.check(3).unwrap();
}

#[tokio::test]
async fn stopping_rules_per_design() {
    let c = corpus();
    for design in Design::ALL {
        let gw = sim_gateway(ReviserPolicy::Compliant);
        let out = run_batch(&config(design, 3), &gw, &instances(&c)).await.unwrap();
        assert!(out.failures.is_empty());
        for (t, case) in out.transcripts.iter().zip(&c.cases) {
            t.check(3).unwrap();
            let baseline_ok = case.plan.is_identity();
            if design.has_coherence() {
                assert_eq!(t.rounds.len(), 3, "{design}");
                assert!(t.rounds.iter().all(|r| r.coherence.is_some()));
            } else {
                let first_faithful = t.rounds.iter().position(|r| r.is_faithful()).unwrap();
                assert_eq!(t.rounds.len(), first_faithful + 1, "{design}");
                assert_eq!(t.rounds.len(), if baseline_ok { 1 } else { 2 });
            }
            for r in &t.rounds {
                assert_eq!(r.critic.is_some(), design.critic().is_some());
                if let Some(fb) = &r.critic {
                    assert_eq!(Some(fb.variant), design.critic());
                }
            }
        }
        assert_eq!(out.metrics.len(), 3);
        assert_eq!(out.metrics[0].unfaithful_count, 6);
        assert_eq!(out.metrics[1].unfaithful_count, 0);
        assert_eq!(out.metrics[2].ra, 1.0);
    }
}

#[tokio::test]
async fn llm_critic_passes_evaluator_lines_through() {
    let c = corpus();
    let case = c.cases.iter().find(|k| !k.plan.is_identity()).unwrap();
    let gw = sim_gateway(ReviserPolicy::Compliant);
    let t = run_instance(&config(Design::Critic, 3), &gw, "r", &case.table, &c.info, Some(&case.baseline))
        .await
        .unwrap();
    let fb = t.rounds[0].critic.as_ref().unwrap();
    assert_eq!(fb.variant, CriticVariant::LlmSummarized);
    assert!(fb.body.contains("contains (an) errors"), "{}", fb.body);
    assert!(t.rounds[1].is_faithful());
}

#[tokio::test]
async fn stubborn_reviser_is_a_fixed_point() {
    let c = corpus();
    let case = c.cases.iter().find(|k| !k.plan.is_identity()).unwrap();
    let gw = sim_gateway(ReviserPolicy::Stubborn);
    let t = run_instance(&config(Design::CriticRule, 4), &gw, "r", &case.table, &c.info, Some(&case.baseline))
        .await
        .unwrap();
    assert_eq!(t.rounds.len(), 4);
    for r in &t.rounds[1..] {
        assert_eq!(r.report, t.rounds[0].report);
        assert_eq!(r.narrative, t.rounds[0].narrative);
    }
}

#[tokio::test]
async fn narrator_generated_baselines() {
    let c = corpus();
    let mut cfg = config(Design::Basic, 3);
    cfg.baseline_mode = BaselineMode::NarratorGenerated;
    let gw = sim_gateway(ReviserPolicy::Compliant);
    let t = run_instance(&cfg, &gw, "r", &c.cases[0].table, &c.info, None).await.unwrap();
    assert_eq!(t.rounds.len(), 1);
    assert!(t.rounds[0].is_faithful());
    assert!(t.rounds[0].usage.requests >= 2);
}

#[tokio::test]
async fn missing_baseline_is_an_error() {
    let c = corpus();
    let gw = sim_gateway(ReviserPolicy::Compliant);
    let err = run_instance(&config(Design::Basic, 3), &gw, "r", &c.cases[0].table, &c.info, None)
        .await
        .unwrap_err();
    assert!(matches!(err, RunError::MissingBaseline(_)));
}

#[tokio::test]
async fn evaluator_failure_degrades_gracefully() {
    let c = corpus();
    let case = &c.cases[0];
    let sim = SimProvider::new("sim", ReviserPolicy::Compliant, 1);
    // Evaluator answers garbage for round 0 (both attempts), then behaves.
    let scripted = Arc::new(
        ScriptedProvider::builder("script")
            .sequence(
                RoleTag::Evaluator,
                "*",
                ["no idea", "still no idea", &sim_answer(&sim, case, &c)],
            )
            .unwrap()
            .build(),
    );
    let gw = Gateway::builder()
        .provider(scripted, ["ev"], ProviderLimits::default())
        .provider(Arc::new(sim), ["sim"], ProviderLimits::default())
        .retry(RetryPolicy::immediate(1))
        .build();
    let mut cfg = config(Design::Basic, 3);
    cfg.models.evaluator = "ev".into();
    let t = run_instance(&cfg, &gw, "r", &case.table, &c.info, Some(&case.baseline)).await.unwrap();
    assert!(t.rounds[0].report.is_none());
    assert_eq!(t.rounds[0].failures[0].agent, "faithful_evaluator");
    assert_eq!(t.rounds[1].narrative, t.rounds[0].narrative);
    assert!(t.rounds[1].report.is_some());
    assert_eq!(t.report_at(0), None);
}

fn sim_answer(sim: &SimProvider, case: &narrative_core::simlab::SimCase, c: &SimCorpus) -> String {
    let prompt = narrative_core::prompt::build_extraction_prompt(&case.baseline, &c.info).unwrap();
    sim.reply(&narrative_core::gateway::ChatRequest::new(&prompt, "sim", Default::default()))
        .unwrap()
}

#[tokio::test]
async fn coherence_failure_is_recorded_and_loop_continues() {
    let c = corpus();
    let case = &c.cases[0];
    let sim = Arc::new(SimProvider::new("sim", ReviserPolicy::Compliant, 1));
    let broken = Arc::new(FnProvider::new("broken", |_req: &narrative_core::gateway::ChatRequest| {
        Err(ProviderError::Fatal("boom".into()))
    }));
    let gw = Gateway::builder()
        .provider(sim, ["sim"], ProviderLimits::default())
        .provider(broken, ["broken"], ProviderLimits::default())
        .retry(RetryPolicy::immediate(1))
        .build();
    let mut cfg = config(Design::CoherentRule, 3);
    cfg.models.coherence = Some("broken".into());
    let t = run_instance(&cfg, &gw, "r", &case.table, &c.info, Some(&case.baseline)).await.unwrap();
    assert_eq!(t.rounds.len(), 3);
    assert!(t.rounds.iter().all(|r| r.coherence.is_none() && r.failures.iter().any(|f| f.agent == "coherence_agent")));
}

#[tokio::test]
async fn unknown_model_fails_the_instance_only() {
    let c = corpus();
    let gw = sim_gateway(ReviserPolicy::Compliant);
    let mut cfg = config(Design::Basic, 3);
    cfg.models.evaluator = "nobody".into();
    let out = run_batch(&cfg, &gw, &instances(&c)[..2]).await.unwrap();
    assert!(out.transcripts.is_empty() && out.metrics.is_empty());
    assert_eq!(out.failures.len(), 2);
    assert!(out.failures[0].error.contains("nobody"));
}

#[tokio::test]
async fn ensemble_panel_votes() {
    let c = corpus();
    let gw = Gateway::builder()
        .provider(
            Arc::new(SimProvider::new("sim", ReviserPolicy::Compliant, 5)),
            ["sim", "e1", "e2", "e3"],
            ProviderLimits::default(),
        )
        .retry(RetryPolicy::immediate(1))
        .build();
    let mut cfg = config(Design::CriticRule, 3);
    cfg.ensemble.enabled = true;
    cfg.ensemble.panel = vec!["e1".into(), "e2".into(), "e3".into()];
    let out = run_batch(&cfg, &gw, &instances(&c)).await.unwrap();
    let r0 = &out.transcripts[0].rounds[0];
    assert_eq!(r0.extractions.len(), 3);
    assert_eq!(r0.consensus.as_ref(), Some(&r0.extractions[0].extraction));
    assert_eq!(out.metrics.last().unwrap().unfaithful_count, 0);
}

#[tokio::test]
async fn partial_reviser_never_increases_unfaithful_count() {
    let c = synth_corpus(21, 40, 25, 4, 8).unwrap();
    let gw = sim_gateway(ReviserPolicy::Partial { p: 0.5 });
    let out = run_batch(&config(Design::CriticRule, 10), &gw, &instances(&c)).await.unwrap();
    let counts: Vec<usize> = out.metrics.iter().map(|m| m.unfaithful_count).collect();
    assert_eq!(counts.len(), 10);
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
    assert_eq!(counts[0], 25);
}

#[tokio::test]
async fn runs_are_deterministic_and_round_trip() {
    let c = corpus();
    let dir = std::env::temp_dir().join(format!("narrative-orch-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let mut texts = Vec::new();
    for _ in 0..2 {
        let gw = sim_gateway(ReviserPolicy::Partial { p: 0.5 });
        let out = run_batch(&config(Design::CoherentRule, 3), &gw, &instances(&c)).await.unwrap();
        texts.push((serde_json::to_string(&out.transcripts).unwrap(), write_metrics_csv(&out.metrics)));
    }
    assert_eq!(texts[0], texts[1]);

    let gw = sim_gateway(ReviserPolicy::Compliant);
    let cfg = config(Design::CriticRule, 3);
    let out = run_batch(&cfg, &gw, &instances(&c)).await.unwrap();
    let run = RunDir::create(&dir, &cfg.effective_run_id()).unwrap();
    assert!(RunDir::create(&dir, &cfg.effective_run_id()).is_err());
    run.write_config(&cfg).unwrap();
    run.append_transcripts(&out.transcripts).unwrap();
    run.write_metrics(&out.metrics).unwrap();
    assert_eq!(run.load_config().unwrap(), cfg);
    assert_eq!(run.load_transcripts().unwrap(), out.transcripts);
    assert_eq!(run.load_metrics().unwrap(), out.metrics);
    assert_eq!(batch_metrics(&run.load_transcripts().unwrap(), 3, 4).unwrap(), out.metrics);

    let id = out.transcripts[0].instance_id.clone();
    run.annotate(&id, 0, ProblemCategory::C2, "hedged wording").unwrap();
    let t = run.annotate(&id, 0, ProblemCategory::C4, "coherence edit broke a value").unwrap();
    assert_eq!(t.annotation.as_ref().unwrap().category, ProblemCategory::C4);
    let loaded = run.load_transcripts().unwrap();
    assert_eq!(loaded[0].annotation_history.len(), 2);
    assert_eq!(loaded[0].annotation, t.annotation);
    assert!(run.annotate(&id, 9, ProblemCategory::C1, "").is_err());
    assert!(run.annotate("missing", 0, ProblemCategory::C1, "").is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}
