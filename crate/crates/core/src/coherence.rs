//! Coherence critique of a narrative, parsed into revision commands.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError, RequestContext};
use crate::prompt::{build_coherence_prompt, PromptError};

pub const NO_ISSUE: &str = "no coherence issue";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoherenceError {
    #[error("coherence agent returned an empty answer")]
    CoherenceFailure,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NoIssue,
    Suggestions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Change,
    Insert,
    Delete,
    Reorder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionCommand {
    pub kind: CommandKind,
    pub payload: String,
    pub justification: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceFeedback {
    pub body: String,
    pub verdict: Verdict,
    pub commands: Vec<RevisionCommand>,
}

fn command_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)^\s*(?:[-*•]\s*)?(?:\(?\d+[.)]\s*)?(?:\*\*)?\s*(change|insert|delete|remove|reorder|move)\b\s*(?:\*\*)?\s*:?\s*(.*)$"#)
            .expect("valid regex")
    })
}

fn justification_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:[-*•]\s*)?(?:\*\*)?\s*(?:justification|explanation|reason)\s*(?:\*\*)?\s*:?\s*(?:\*\*)?\s*(.*)$")
            .expect("valid regex")
    })
}

/// Parses a coherence answer. Verdict is `NoIssue` iff the answer contains the
/// no-issue phrase (case-insensitive).
pub fn parse_coherence(body: &str) -> Result<CoherenceFeedback, CoherenceError> {
    let body = body.trim();
    if body.is_empty() {
        return Err(CoherenceError::CoherenceFailure);
    }
    if body.to_lowercase().contains(NO_ISSUE) {
        return Ok(CoherenceFeedback {
            body: body.to_string(),
            verdict: Verdict::NoIssue,
            commands: Vec::new(),
        });
    }
    let mut commands: Vec<RevisionCommand> = Vec::new();
    for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(c) = justification_re().captures(line) {
            let text = c[1].trim().to_string();
            if let Some(last) = commands.last_mut() {
                match &mut last.justification {
                    Some(j) => {
                        j.push(' ');
                        j.push_str(&text);
                    }
                    None => last.justification = Some(text),
                }
                continue;
            }
        }
        if let Some(c) = command_re().captures(line) {
            let kind = match c[1].to_lowercase().as_str() {
                "change" => CommandKind::Change,
                "insert" => CommandKind::Insert,
                "delete" | "remove" => CommandKind::Delete,
                _ => CommandKind::Reorder,
            };
            let rest = c[2].trim();
            // keep the verb when the command reads as a sentence ("Change X to Y")
            let payload = if line.contains(':') && !rest.is_empty() {
                rest.to_string()
            } else {
                line.trim_start_matches(|ch: char| !ch.is_alphabetic()).to_string()
            };
            commands.push(RevisionCommand {
                kind,
                payload,
                justification: None,
            });
        } else {
            commands.push(RevisionCommand {
                kind: CommandKind::Change,
                payload: line.to_string(),
                justification: None,
            });
        }
    }
    Ok(CoherenceFeedback {
        body: body.to_string(),
        verdict: Verdict::Suggestions,
        commands,
    })
}

pub async fn critique_coherence(
    narrative: &str,
    gateway: &Gateway,
    model_id: &str,
    context: &RequestContext,
) -> Result<CoherenceFeedback, CoherenceError> {
    let prompt = build_coherence_prompt(narrative)?;
    let response = gateway
        .complete(&ChatRequest::new(&prompt, model_id, context.clone()))
        .await?;
    parse_coherence(&response.body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_issue_verdict() {
        let fb = parse_coherence("No coherence issue.").unwrap();
        assert_eq!(fb.verdict, Verdict::NoIssue);
        assert!(fb.commands.is_empty());
    }

    #[test]
    fn insert_with_justification() {
        let fb = parse_coherence(
            "1) Insert \"In contrast,\" before \"The second most important feature is BMI\".\n\
             Justification: the sentence reverses the direction of the previous one.",
        )
        .unwrap();
        assert_eq!(fb.verdict, Verdict::Suggestions);
        assert_eq!(fb.commands.len(), 1);
        assert_eq!(fb.commands[0].kind, CommandKind::Insert);
        assert!(fb.commands[0].payload.starts_with("Insert \"In contrast,\""));
        assert_eq!(
            fb.commands[0].justification.as_deref(),
            Some("the sentence reverses the direction of the previous one.")
        );
    }

    #[test]
    fn numbered_commands_and_free_lines() {
        let fb = parse_coherence(
            "2) Reorder: the sentence on housing after the sentence on savings\n\
             - **Explanation:** groups related features.\n\
             1. Delete \"Overall,\"\n\
             Consider merging the last two sentences.",
        )
        .unwrap();
        let kinds: Vec<_> = fb.commands.iter().map(|c| c.kind).collect();
        assert_eq!(kinds, [CommandKind::Reorder, CommandKind::Delete, CommandKind::Change]);
        assert_eq!(fb.commands[0].payload, "the sentence on housing after the sentence on savings");
        assert_eq!(fb.commands[0].justification.as_deref(), Some("groups related features."));
        assert_eq!(fb.commands[2].payload, "Consider merging the last two sentences.");
    }

    #[test]
    fn empty_answer_fails() {
        assert_eq!(parse_coherence("  \n").unwrap_err(), CoherenceError::CoherenceFailure);
    }
}
