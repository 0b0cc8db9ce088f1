//! The refinement loop: one instance through up to `max_rounds` rounds of
//! evaluation, critique and revision, and batches of instances.

pub mod config;
pub mod store;
pub mod transcript;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BaselineMode, Design, EnsembleConfig, ModelBindings, RunConfig};
pub use transcript::{AgentFailure, Annotation, MemberExtraction, ProblemCategory, RoundRecord, Transcript};

use crate::coherence::critique_coherence;
use crate::critic::{llm_critic, rule_critic, CriticFeedback, CriticVariant};
use crate::evaluator::{evaluate, evaluate_ensemble, EvalSettings, EvaluateError, FaithfulnessReport};
use crate::gateway::{ChatRequest, Gateway, GatewayError, RequestContext, Usage};
use crate::metrics::{MetricsError, RoundMetrics};
use crate::model::{DatasetInfo, ModelError, NarrativeOrigin, ShapTable};
use crate::prompt::{build_base_prompt, build_revision_prompt, GenerationRules, PromptError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("instance {0}: a baseline narrative is required in from_file mode")]
    MissingBaseline(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("narrator failed: {0}")]
    Narrator(GatewayError),
    #[error("evaluator failed: {0}")]
    Evaluator(GatewayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One unit of work for a batch.
#[derive(Debug, Clone)]
pub struct Instance<'a> {
    pub table: &'a ShapTable,
    pub info: &'a DatasetInfo,
    pub baseline: Option<&'a str>,
}

struct Evaluated {
    extractions: Vec<MemberExtraction>,
    consensus: Option<crate::evaluator::ExtractionRecord>,
    report: FaithfulnessReport,
    evaluator_texts: Vec<String>,
    failures: Vec<AgentFailure>,
}

fn is_hard(err: &GatewayError) -> bool {
    matches!(err, GatewayError::Auth(_) | GatewayError::UnknownModel(_))
}

fn hard_evaluator_error(err: &EvaluateError) -> Option<RunError> {
    match err {
        EvaluateError::Gateway(g) if is_hard(g) => Some(RunError::Evaluator(g.clone())),
        EvaluateError::Model(m) => Some(RunError::Model(m.clone())),
        _ => None,
    }
}

async fn evaluate_round(
    config: &RunConfig,
    gateway: &Gateway,
    narrative: &str,
    table: &ShapTable,
    info: &DatasetInfo,
    ctx: &RequestContext,
) -> Result<Result<Evaluated, AgentFailure>, RunError> {
    let settings = EvalSettings {
        n_features: config.n_features,
        value_tolerance: config.value_tolerance,
    };
    let member = |e: &crate::evaluator::Evaluation| MemberExtraction {
        evaluator_id: e.evaluator_id.clone(),
        raw_answers: e.raw_answers.clone(),
        extraction: e.extraction.clone(),
        warnings: e.warnings.clone(),
    };
    if config.ensemble.enabled {
        let primary = config.ensemble.primary().expect("validated panel").to_string();
        match evaluate_ensemble(narrative, table, info, gateway, &config.ensemble.panel, &primary, settings, ctx).await {
            Ok(ens) => Ok(Ok(Evaluated {
                extractions: ens.members.iter().map(member).collect(),
                evaluator_texts: ens.members.iter().map(|m| m.report.feedback_text.clone()).collect(),
                consensus: Some(ens.consensus),
                report: ens.report,
                failures: ens
                    .failures
                    .into_iter()
                    .map(|(agent, message)| AgentFailure { agent, message })
                    .collect(),
            })),
            Err(e) => {
                if let Some(hard) = hard_evaluator_error(&e) {
                    return Err(hard);
                }
                Ok(Err(AgentFailure {
                    agent: "faithful_evaluator".into(),
                    message: e.to_string(),
                }))
            }
        }
    } else {
        match evaluate(narrative, table, info, gateway, &config.models.evaluator, settings, ctx).await {
            Ok(ev) => Ok(Ok(Evaluated {
                extractions: vec![member(&ev)],
                evaluator_texts: vec![ev.report.feedback_text.clone()],
                consensus: None,
                report: ev.report,
                failures: Vec::new(),
            })),
            Err(e) => {
                if let Some(hard) = hard_evaluator_error(&e) {
                    return Err(hard);
                }
                Ok(Err(AgentFailure {
                    agent: "faithful_evaluator".into(),
                    message: e.to_string(),
                }))
            }
        }
    }
}

/// Runs the refinement loop for one instance.
pub async fn run_instance(
    config: &RunConfig,
    gateway: &Gateway,
    run_id: &str,
    table: &ShapTable,
    info: &DatasetInfo,
    baseline: Option<&str>,
) -> Result<Transcript, RunError> {
    config.validate()?;
    let rules = GenerationRules::new(config.max_sentences, config.n_features)?;
    let base = build_base_prompt(table, info, &rules)?;
    let ctx = |round: usize| RequestContext {
        run_id: run_id.to_string(),
        instance_id: table.instance_id.clone(),
        round,
    };

    let (mut narrative, mut origin) = match (config.baseline_mode, baseline) {
        (BaselineMode::FromFile, Some(text)) if !text.trim().is_empty() => (text.to_string(), NarrativeOrigin::BaselineFile),
        (BaselineMode::FromFile, _) => return Err(RunError::MissingBaseline(table.instance_id.clone())),
        (BaselineMode::NarratorGenerated, _) => {
            let resp = gateway
                .complete(&ChatRequest::new(&base, &config.models.narrator, ctx(0)))
                .await
                .map_err(RunError::Narrator)?;
            (resp.body.trim().to_string(), NarrativeOrigin::NarratorGenerated)
        }
    };

    let mut rounds = Vec::new();
    for t in 0..config.max_rounds {
        let mut failures = Vec::new();
        let evaluated = match evaluate_round(config, gateway, &narrative, table, info, &ctx(t)).await? {
            Ok(ev) => Some(ev),
            Err(f) => {
                tracing::warn!(instance = %table.instance_id, round = t, "{}", f.message);
                failures.push(f);
                None
            }
        };
        let (extractions, consensus, report, evaluator_texts) = match evaluated {
            Some(ev) => {
                failures.extend(ev.failures);
                (ev.extractions, ev.consensus, Some(ev.report), ev.evaluator_texts)
            }
            None => (Vec::new(), None, None, Vec::new()),
        };

        let critic: Option<CriticFeedback> = match (config.design.critic(), &report) {
            (Some(CriticVariant::Rule), Some(r)) => Some(rule_critic(r, table).map_err(|e| RunError::Config {
                field: "table".into(),
                message: e.to_string(),
            })?),
            (Some(CriticVariant::LlmSummarized), Some(r)) => {
                match llm_critic(r, table, &evaluator_texts, gateway, config.models.critic_model(), &ctx(t)).await {
                    Ok(fb) => Some(fb),
                    Err(e) => {
                        failures.push(AgentFailure {
                            agent: "faithful_critic".into(),
                            message: e.to_string(),
                        });
                        let mut fb = rule_critic(r, table).map_err(|e| RunError::Config {
                            field: "table".into(),
                            message: e.to_string(),
                        })?;
                        fb.warnings.push("critic model failed; rule instructions used".into());
                        Some(fb)
                    }
                }
            }
            _ => None,
        };

        let coherence = if config.design.has_coherence() {
            match critique_coherence(&narrative, gateway, config.models.coherence_model(), &ctx(t)).await {
                Ok(fb) => Some(fb),
                Err(e) => {
                    failures.push(AgentFailure {
                        agent: "coherence_agent".into(),
                        message: e.to_string(),
                    });
                    None
                }
            }
        } else {
            None
        };

        let faithful = report.as_ref().is_some_and(FaithfulnessReport::is_faithful);
        let last = t + 1 == config.max_rounds;
        let stop = last || (!config.design.has_coherence() && faithful);

        let faithful_feedback = match (&critic, &report) {
            (Some(c), _) => Some(c.body.clone()),
            (None, Some(r)) => Some(r.feedback_text.clone()),
            _ => None,
        };
        rounds.push(RoundRecord {
            round_index: t,
            narrative: narrative.clone(),
            origin,
            extractions,
            consensus,
            evaluator_feedback: report.as_ref().map(|r| r.feedback_text.clone()),
            report,
            critic,
            coherence: coherence.clone(),
            failures,
            stop_flag: stop,
            usage: Usage::default(),
        });
        if stop {
            break;
        }

        // Without a report there is nothing to revise against; the narrative is kept.
        let Some(feedback) = faithful_feedback else { continue };
        let prompt = build_revision_prompt(&base, &narrative, &feedback, coherence.as_ref().map(|c| c.body.as_str()))?;
        let resp = gateway
            .complete(&ChatRequest::new(&prompt, &config.models.narrator, ctx(t + 1)))
            .await
            .map_err(RunError::Narrator)?;
        narrative = resp.body.trim().to_string();
        origin = NarrativeOrigin::NarratorRevised;
    }
    // Narrator calls producing round t+1 are billed to t+1.
    for r in &mut rounds {
        r.usage = gateway.ledger().context_usage(&ctx(r.round_index));
    }

    Ok(Transcript {
        run_id: run_id.to_string(),
        instance_id: table.instance_id.clone(),
        dataset_id: table.dataset_id.clone(),
        design: config.design,
        rounds,
        annotation: None,
        annotation_history: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub instance_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    /// Completed transcripts, in input order.
    pub transcripts: Vec<Transcript>,
    pub failures: Vec<InstanceFailure>,
    pub metrics: Vec<RoundMetrics<f64>>,
}

/// Per-round metrics over a batch; an instance's latest report is carried into later rounds.
///
/// Instances without any report yet are left out of a round; a round nobody has a
/// report for gets no row.
pub fn batch_metrics(
    transcripts: &[Transcript],
    max_rounds: usize,
    n: usize,
) -> Result<Vec<RoundMetrics<f64>>, MetricsError> {
    if transcripts.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let mut rows = Vec::new();
    for t in 0..max_rounds {
        let reports: Vec<&FaithfulnessReport> = transcripts.iter().filter_map(|tr| tr.report_at(t)).collect();
        if !reports.is_empty() {
            rows.push(RoundMetrics::from_reports(t, &reports, n)?);
        }
    }
    Ok(rows)
}

pub async fn run_batch(
    config: &RunConfig,
    gateway: &Gateway,
    instances: &[Instance<'_>],
) -> Result<BatchOutcome, RunError> {
    config.validate()?;
    let run_id = config.effective_run_id();
    let results: Vec<Result<Transcript, RunError>> = stream::iter(instances.iter())
        .map(|inst| run_instance(config, gateway, &run_id, inst.table, inst.info, inst.baseline))
        .buffered(config.concurrency)
        .collect()
        .await;
    let mut transcripts = Vec::new();
    let mut failures = Vec::new();
    for (inst, result) in instances.iter().zip(results) {
        match result {
            Ok(t) => transcripts.push(t),
            Err(e) => {
                tracing::error!(instance = %inst.table.instance_id, error = %e, "instance failed");
                failures.push(InstanceFailure {
                    instance_id: inst.table.instance_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let metrics = if transcripts.is_empty() {
        Vec::new()
    } else {
        batch_metrics(&transcripts, config.max_rounds, config.n_features)?
    };
    Ok(BatchOutcome {
        transcripts,
        failures,
        metrics,
    })
}
