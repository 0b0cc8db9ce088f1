//! Narrative-to-dictionary extraction through a model, and rule-based comparison
//! of the extraction against the SHAP table.

pub mod compare;
pub mod extraction;
pub mod literal;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compare::{
    compare, compare_against, format_feedback, FaithfulnessReport, FeatureCheck, Field,
    DEFAULT_VALUE_TOLERANCE, FAITHFUL_SENTENCE,
};
pub use extraction::{
    parse_extraction, ExtractedFeature, ExtractionError, ExtractionRecord, ExtractionWarning,
    ParsedExtraction,
};

use crate::ensemble::{vote, VotePanel};
use crate::gateway::{ChatRequest, Gateway, GatewayError, RequestContext};
use crate::model::{DatasetInfo, ModelError, ShapTable};
use crate::prompt::{build_extraction_prompt, PromptError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluateError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("evaluator answer could not be parsed after {} attempts: {error}", answers.len())]
    Unparseable { answers: Vec<String>, error: ExtractionError },
    #[error("no evaluator on the panel produced a usable extraction")]
    PanelFailed(Vec<(String, String)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub evaluator_id: String,
    pub raw_answers: Vec<String>,
    pub extraction: ExtractionRecord,
    pub report: FaithfulnessReport,
    pub warnings: Vec<ExtractionWarning>,
}

/// Comparison settings shared by single and ensemble evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub n_features: usize,
    pub value_tolerance: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n_features: 4,
            value_tolerance: DEFAULT_VALUE_TOLERANCE,
        }
    }
}

fn reask_suffix(error: &ExtractionError) -> String {
    format!(
        "\n\nYour previous answer could not be used ({error}). Reply with the Python dictionary only."
    )
}

/// Asks `model_id` for an extraction, re-asking once when the answer does not parse.
pub async fn extract(
    narrative: &str,
    info: &DatasetInfo,
    gateway: &Gateway,
    model_id: &str,
    context: &RequestContext,
) -> Result<(Vec<String>, ParsedExtraction), EvaluateError> {
    let prompt = build_extraction_prompt(narrative, info)?;
    let mut request = ChatRequest::new(&prompt, model_id, context.clone());
    let mut answers = Vec::new();
    let mut last_error = None;
    for _ in 0..2 {
        let response = gateway.complete(&request).await?;
        answers.push(response.body.clone());
        match parse_extraction(&response.body, info) {
            Ok(parsed) => return Ok((answers, parsed)),
            Err(e) => {
                tracing::warn!(model = model_id, error = %e, "unparseable evaluator answer");
                request.body = format!("{}{}", prompt.body, reask_suffix(&e));
                last_error = Some(e);
            }
        }
    }
    Err(EvaluateError::Unparseable {
        answers,
        error: last_error.expect("loop ran"),
    })
}

/// Single-evaluator faithfulness check of one narrative.
pub async fn evaluate(
    narrative: &str,
    table: &ShapTable,
    info: &DatasetInfo,
    gateway: &Gateway,
    model_id: &str,
    settings: EvalSettings,
    context: &RequestContext,
) -> Result<Evaluation, EvaluateError> {
    let (raw_answers, parsed) = extract(narrative, info, gateway, model_id, context).await?;
    let report = compare(&parsed.record, table, settings.n_features, settings.value_tolerance)?;
    Ok(Evaluation {
        evaluator_id: model_id.to_string(),
        raw_answers,
        extraction: parsed.record,
        report,
        warnings: parsed.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEvaluation {
    /// Successful individual evaluations, in panel order.
    pub members: Vec<Evaluation>,
    /// Panel members that failed, with the error message.
    pub failures: Vec<(String, String)>,
    pub primary: String,
    pub consensus: ExtractionRecord,
    pub report: FaithfulnessReport,
}

/// Evaluates with every panel model concurrently and votes field by field.
///
/// With a single usable extraction that extraction is taken as is. When the
/// designated primary failed, the first successful member acts as primary.
#[allow(clippy::too_many_arguments)]
pub async fn evaluate_ensemble(
    narrative: &str,
    table: &ShapTable,
    info: &DatasetInfo,
    gateway: &Gateway,
    panel_models: &[String],
    primary: &str,
    settings: EvalSettings,
    context: &RequestContext,
) -> Result<EnsembleEvaluation, EvaluateError> {
    let results = join_all(
        panel_models
            .iter()
            .map(|m| evaluate(narrative, table, info, gateway, m, settings, context)),
    )
    .await;
    let mut members = Vec::new();
    let mut failures = Vec::new();
    for (model, result) in panel_models.iter().zip(results) {
        match result {
            Ok(e) => members.push(e),
            Err(e) => failures.push((model.clone(), e.to_string())),
        }
    }
    if members.is_empty() {
        return Err(EvaluateError::PanelFailed(failures));
    }
    let primary = if members.iter().any(|m| m.evaluator_id == primary) {
        primary.to_string()
    } else {
        members[0].evaluator_id.clone()
    };
    let consensus = if members.len() == 1 {
        members[0].extraction.clone()
    } else {
        let votes = members
            .iter()
            .map(|m| (m.evaluator_id.clone(), m.extraction.clone()))
            .collect();
        let panel = VotePanel::new(votes, primary.clone())
            .map_err(|e| EvaluateError::PanelFailed(vec![(primary.clone(), e.to_string())]))?
            .with_tolerance(settings.value_tolerance);
        vote(&panel).map_err(|e| EvaluateError::PanelFailed(vec![(primary.clone(), e.to_string())]))?
    };
    let report = compare(&consensus, table, settings.n_features, settings.value_tolerance)?;
    Ok(EnsembleEvaluation {
        members,
        failures,
        primary,
        consensus,
        report,
    })
}
