use std::sync::OnceLock;

use async_trait::async_trait;
use regex::Regex;

use super::narrative::{opener, Claim, TemplatedNarrative, CLOSING};
use super::reviser::{mock_reviser, ReviserPolicy};
use super::oracle_extract;
use crate::coherence::NO_ISSUE;
use crate::gateway::{ChatProvider, ChatRequest, ProviderError, ProviderReply};
use crate::model::{Sign, TruthEntry};
use crate::prompt::{fenced_input, parse_rendered_table, split_revision_prompt, RoleTag};

pub const NOT_TEMPLATED_REPLY: &str = "I could not identify any feature descriptions in this narrative.";

/// Serves every agent role without a model: the oracle extractor as evaluator, the
/// mock reviser as narrator, an echoing critic and a coherence agent with no issues.
#[derive(Debug, Clone)]
pub struct SimProvider {
    id: String,
    policy: ReviserPolicy,
    seed: u64,
}

impl SimProvider {
    pub fn new(id: impl Into<String>, policy: ReviserPolicy, seed: u64) -> Self {
        SimProvider {
            id: id.into(),
            policy,
            seed,
        }
    }

    pub fn reply(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let body = request.body.as_str();
        match request.role_tag {
            RoleTag::Evaluator => {
                let narrative = fenced_input(body)
                    .ok_or_else(|| ProviderError::Fatal("extraction prompt has no fenced narrative".into()))?;
                Ok(match oracle_extract(narrative) {
                    Ok(record) => format!("```python\n{}\n```", record.to_literal()),
                    Err(_) => NOT_TEMPLATED_REPLY.to_string(),
                })
            }
            RoleTag::Narrator => match split_revision_prompt(body) {
                Some(parts) => {
                    let truth = truth_from_prompt(parts.initial_prompt);
                    mock_reviser(
                        parts.last_narrative,
                        parts.faithful_feedback,
                        self.policy,
                        self.seed,
                        truth.as_deref(),
                    )
                    .map(|o| o.narrative)
                    .or_else(|_| Ok(parts.last_narrative.to_string()))
                }
                None => base_narrative(body)
                    .ok_or_else(|| ProviderError::Fatal("base prompt has no SHAP table".into())),
            },
            RoleTag::CriticSummary => Ok(fenced_input(body).unwrap_or(body).to_string()),
            RoleTag::Coherence => Ok(NO_ISSUE.to_string()),
        }
    }
}

fn truth_from_prompt(prompt: &str) -> Option<Vec<TruthEntry>> {
    let rows = parse_rendered_table(prompt)?;
    Some(
        rows.into_iter()
            .enumerate()
            .map(|(rank, r)| TruthEntry {
                feature_name: r.feature_name,
                rank,
                sign: if r.shap_negative { Sign::Negative } else { Sign::Positive },
                value: r.feature_value,
            })
            .collect(),
    )
}

fn result_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"The model predicts class (\d) for this instance, with a predicted probability of (\S+) for class 1\.")
            .expect("valid regex")
    })
}

/// A faithful templated narrative for the table embedded in a base prompt.
fn base_narrative(prompt: &str) -> Option<String> {
    let truth = truth_from_prompt(prompt)?;
    if truth.is_empty() {
        return None;
    }
    let opener = result_re()
        .captures(prompt)
        .and_then(|c| Some(opener(c[1].parse().ok()?, c[2].parse().ok()?)))
        .unwrap_or_default();
    let doc = TemplatedNarrative {
        opener,
        claims: truth
            .into_iter()
            .map(|t| Claim {
                feature_name: t.feature_name,
                sign: t.sign,
                value: Some(t.value),
            })
            .collect(),
        closing: CLOSING.to_string(),
    };
    Some(doc.render())
}

#[async_trait]
impl ChatProvider for SimProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        self.reply(request).map(ProviderReply::text)
    }
}
