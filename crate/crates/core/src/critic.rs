//! Turns a faithfulness report into revision instructions for the narrator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{FaithfulnessReport, FAITHFUL_SENTENCE};
use crate::gateway::{ChatRequest, Gateway, GatewayError, RequestContext};
use crate::model::{natural_number, ShapTable};
use crate::prompt::{build_critic_summary_prompt, PromptError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriticError {
    #[error("report does not match the table: {0}")]
    TableMismatch(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticVariant {
    Rule,
    LlmSummarized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticFeedback {
    pub body: String,
    pub variant: CriticVariant,
    pub instruction_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn ordinal(k: usize) -> String {
    let suffix = match (k % 10, k % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{k}{suffix}")
}

pub fn move_instruction(feature: &str, rank: usize) -> String {
    format!(
        "Move the description of feature '{feature}' so it is presented as the {} most important feature (rank {rank} in the SHAP table).",
        ordinal(rank + 1)
    )
}

pub fn sign_instruction(feature: &str, from: &str, to: &str) -> String {
    format!("Change the stated influence of feature '{feature}' from {from} to {to}.")
}

pub fn value_instruction(feature: &str, value: f64) -> String {
    format!("Change the stated value of feature '{feature}' to {}.", natural_number(value))
}

pub fn add_instruction(feature: &str, rank: usize, sign_word: &str, value: f64) -> String {
    format!(
        "Add a description of feature '{feature}' (rank {rank}, {sign_word} influence, value {}).",
        natural_number(value)
    )
}

pub fn remove_unknown_instruction(feature: &str) -> String {
    format!("Remove the description of feature '{feature}'; it is not in the SHAP table.")
}

pub fn remove_extra_instruction(feature: &str, n: usize) -> String {
    format!(
        "Remove the description of feature '{feature}'; it is not among the {n} most important features."
    )
}

/// Deterministic instructions, ordered by ground-truth rank, then removals.
pub fn rule_instructions(
    report: &FaithfulnessReport,
    table: &ShapTable,
) -> Result<Vec<String>, CriticError> {
    let mut out = Vec::new();
    for check in &report.checks {
        let row = table
            .row(&check.feature_name)
            .ok_or_else(|| CriticError::TableMismatch(format!("`{}` is not in the table", check.feature_name)))?;
        if row.0 != check.truth_rank {
            return Err(CriticError::TableMismatch(format!(
                "`{}` has rank {} in the table but {} in the report",
                check.feature_name, row.0, check.truth_rank
            )));
        }
        let Some(claimed) = &check.extracted else {
            out.push(add_instruction(
                &check.feature_name,
                check.truth_rank,
                check.truth_sign.word(),
                check.truth_value,
            ));
            continue;
        };
        if check.rank_error {
            out.push(move_instruction(&check.feature_name, check.truth_rank));
        }
        if check.sign_error {
            out.push(sign_instruction(
                &check.feature_name,
                claimed.sign.word(),
                check.truth_sign.word(),
            ));
        }
        if check.value_error {
            out.push(value_instruction(&check.feature_name, check.truth_value));
        }
    }
    for name in &report.unknown_features {
        out.push(remove_unknown_instruction(name));
    }
    for name in &report.extra_features {
        out.push(remove_extra_instruction(name, report.n));
    }
    Ok(out)
}

pub fn rule_critic(report: &FaithfulnessReport, table: &ShapTable) -> Result<CriticFeedback, CriticError> {
    let instructions = rule_instructions(report, table)?;
    let body = if instructions.is_empty() {
        FAITHFUL_SENTENCE.to_string()
    } else {
        instructions.join("\n")
    };
    Ok(CriticFeedback {
        body,
        variant: CriticVariant::Rule,
        instruction_count: instructions.len(),
        warnings: Vec::new(),
    })
}

/// Names that a summary of this report must mention.
fn flagged_features(report: &FaithfulnessReport) -> Vec<&str> {
    report
        .checks
        .iter()
        .filter(|c| c.has_error())
        .map(|c| c.feature_name.as_str())
        .chain(report.unknown_features.iter().map(String::as_str))
        .chain(report.extra_features.iter().map(String::as_str))
        .collect()
}

/// Model-summarized critic over the evaluators' feedback.
///
/// A faithful report is passed through without a model call. A summary that drops a
/// flagged feature is replaced by the rule-based body, with a warning.
pub async fn llm_critic(
    report: &FaithfulnessReport,
    table: &ShapTable,
    evaluator_feedback: &[String],
    gateway: &Gateway,
    model_id: &str,
    context: &RequestContext,
) -> Result<CriticFeedback, CriticError> {
    let rule = rule_critic(report, table)?;
    if report.is_faithful() {
        return Ok(CriticFeedback {
            variant: CriticVariant::LlmSummarized,
            ..rule
        });
    }
    let combined = if evaluator_feedback.len() == 1 {
        evaluator_feedback[0].clone()
    } else {
        evaluator_feedback
            .iter()
            .enumerate()
            .map(|(i, f)| format!("Feedback {}:\n{f}", i + 1))
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    let combined = if combined.trim().is_empty() { report.feedback_text.clone() } else { combined };
    let prompt = build_critic_summary_prompt(&combined)?;
    let response = gateway
        .complete(&ChatRequest::new(&prompt, model_id, context.clone()))
        .await?;
    let lost: Vec<&str> = flagged_features(report)
        .into_iter()
        .filter(|name| !response.body.contains(name))
        .collect();
    if !lost.is_empty() {
        tracing::warn!(?lost, "critic summary dropped features; using rule instructions");
        return Ok(CriticFeedback {
            warnings: vec![format!("summary omitted {}; rule instructions used", lost.join(", "))],
            ..rule
        });
    }
    Ok(CriticFeedback {
        body: response.body.trim().to_string(),
        variant: CriticVariant::LlmSummarized,
        instruction_count: rule.instruction_count,
        warnings: Vec::new(),
    })
}
