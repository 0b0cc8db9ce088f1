//! Prompt assembly for every agent role.
//!
//! All builders are pure: the same inputs always produce byte-identical prompts.
//! User-supplied text (narratives, feedback, descriptions) is normalized so that it
//! cannot contain the `====` delimiter used to fence prompt inputs.

pub mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{natural_number, DatasetInfo, ShapTable};
use template::TemplateError;

pub use template::Template;

pub const DELIMITER_RUN: &str = "====";
pub const DELIMITER_REPLACEMENT: &str = "≡≡≡≡";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("feature `{0}` has no description in the dataset info")]
    MissingDescription(String),
    #[error("feedback is empty")]
    EmptyFeedback,
    #[error("narrative is empty")]
    EmptyNarrative,
    #[error("the table has {rows} rows but {n} features were requested")]
    NTooLarge { n: usize, rows: usize },
    #[error("invalid generation rules: {0}")]
    InvalidRules(String),
    #[error("expected a {expected:?} prompt, got {actual:?}")]
    WrongRole { expected: RoleTag, actual: RoleTag },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Narrator,
    Evaluator,
    CriticSummary,
    Coherence,
}

impl RoleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::Narrator => "narrator",
            RoleTag::Evaluator => "evaluator",
            RoleTag::CriticSummary => "critic_summary",
            RoleTag::Coherence => "coherence",
        }
    }

    /// Section headers every prompt of this role must contain, in order.
    pub fn required_sections(self) -> &'static [&'static str] {
        match self {
            RoleTag::Narrator => &[
                "Explanation goal:",
                "Summary SHAP methodology:",
                "Dataset context:",
                "SHAP table:",
                "Result string:",
                "Format related rules:",
                "Content related rules:",
            ],
            RoleTag::Evaluator | RoleTag::CriticSummary => {
                &["Context:", "Input text:", "Output Structure:", "Guidelines:"]
            }
            RoleTag::Coherence => &[
                "Context:",
                "Definition of coherence:",
                "Input text:",
                "Output Structure:",
                "Guidelines:",
            ],
        }
    }
}

impl std::fmt::Display for RoleTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub role_tag: RoleTag,
    pub body: String,
    pub template: String,
    pub warnings: Vec<String>,
}

impl PromptText {
    /// True when every mandatory section header for the role appears in order.
    pub fn has_required_sections(&self) -> bool {
        let mut from = 0;
        for marker in self.role_tag.required_sections() {
            match self.body[from..].find(marker) {
                Some(at) => from += at + marker.len(),
                None => return false,
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRules {
    pub max_sentences: usize,
    pub n_features: usize,
    pub format_rules: Vec<String>,
    pub content_rules: Vec<String>,
    /// Decimal places used for SHAP values in the rendered table.
    pub shap_decimals: usize,
}

impl GenerationRules {
    pub fn new(max_sentences: usize, n_features: usize) -> Result<Self, PromptError> {
        if max_sentences < 3 {
            return Err(PromptError::InvalidRules(format!(
                "max_sentences must be at least 3, got {max_sentences}"
            )));
        }
        if n_features == 0 {
            return Err(PromptError::InvalidRules("n_features must be at least 1".into()));
        }
        Ok(GenerationRules {
            max_sentences,
            n_features,
            format_rules: vec![
                format!("The narrative must contain at most {max_sentences} sentences."),
                "Start with one sentence that clearly states the prediction and the predicted probability.".into(),
                format!(
                    "Then explain the {n_features} most important features, one after another, in the order of the SHAP table."
                ),
                "End with a one-sentence summary of the explanation.".into(),
                "Write plain prose without lists, headings, tables or markdown.".into(),
            ],
            content_rules: vec![
                "For every feature, state whether it increases or decreases the probability of class 1.".into(),
                "When you mention the value of a feature, use exactly the value given in the table; you may compare it to the average.".into(),
                "Do not mention SHAP values and do not discuss features that are not in the table.".into(),
                "Only suggest a reason for the influence of a feature when it plausibly follows from its description; do not speculate otherwise.".into(),
            ],
            shap_decimals: 3,
        })
    }

    pub fn with_n_features(&self, n_features: usize) -> Result<Self, PromptError> {
        let mut fresh = GenerationRules::new(self.max_sentences, n_features)?;
        fresh.shap_decimals = self.shap_decimals;
        Ok(fresh)
    }
}

impl Default for GenerationRules {
    fn default() -> Self {
        GenerationRules::new(10, 4).expect("default rules are valid")
    }
}

/// Replaces every `====` run in user content with `≡≡≡≡`.
pub fn normalize_delimiters(text: &str) -> String {
    text.replace(DELIMITER_RUN, DELIMITER_REPLACEMENT)
}

fn single_line(text: &str) -> String {
    normalize_delimiters(&text.replace(['\r', '\n'], " "))
}

fn numbered(rules: &[String]) -> String {
    rules
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{}) {}", i + 1, single_line(r)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub const TABLE_HEADER: &str = "Feature | SHAP | Feat.val. | Feat.avg. | Feat.desc.";

/// Formats a SHAP value at fixed precision; the minus sign appears only for negative values.
pub fn format_shap(value: f64, decimals: usize) -> String {
    let s = format!("{value:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        if value < 0.0 {
            // Keep the direction visible for tiny negative attributions.
            return s;
        }
        return s[1..].to_string();
    }
    s
}

/// Renders the top `n` rows of a table as a pipe-separated grid.
pub fn render_shap_table(
    table: &ShapTable,
    info: &DatasetInfo,
    n: usize,
    decimals: usize,
) -> String {
    let mut lines = vec![TABLE_HEADER.to_string()];
    for row in table.rows.iter().take(n) {
        let desc = if row.feature_description.trim().is_empty() {
            info.description_of(&row.feature_name).unwrap_or("")
        } else {
            &row.feature_description
        };
        lines.push(format!(
            "{} | {} | {} | {} | {}",
            row.feature_name,
            format_shap(row.shap_value, decimals),
            natural_number(row.feature_value),
            natural_number(row.feature_average),
            single_line(desc).replace('|', "/"),
        ));
    }
    lines.join("\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedRow {
    pub feature_name: String,
    /// The SHAP value as printed (rounded to the rendering precision).
    pub shap_value: f64,
    /// True when the printed SHAP value carries a minus sign.
    pub shap_negative: bool,
    pub feature_value: f64,
    pub feature_average: f64,
    pub feature_description: String,
}

/// Parses a grid produced by [`render_shap_table`] out of any text containing it.
pub fn parse_rendered_table(text: &str) -> Option<Vec<RenderedRow>> {
    let start = text.find(TABLE_HEADER)? + TABLE_HEADER.len();
    let mut rows = Vec::new();
    for line in text[start..].lines().skip(1) {
        if line.trim().is_empty() {
            break;
        }
        let cols: Vec<&str> = line.splitn(5, " | ").collect();
        if cols.len() != 5 {
            break;
        }
        rows.push(RenderedRow {
            feature_name: cols[0].to_string(),
            shap_value: cols[1].parse().ok()?,
            shap_negative: cols[1].starts_with('-'),
            feature_value: cols[2].parse().ok()?,
            feature_average: cols[3].parse().ok()?,
            feature_description: cols[4].to_string(),
        });
    }
    Some(rows)
}

pub fn result_string(table: &ShapTable) -> String {
    format!(
        "The model predicts class {} for this instance, with a predicted probability of {} for class 1.",
        table.predicted_class,
        natural_number(table.probability_class1)
    )
}

pub fn build_base_prompt(
    table: &ShapTable,
    info: &DatasetInfo,
    rules: &GenerationRules,
) -> Result<PromptText, PromptError> {
    if let Some(name) = info.undescribed(table).first() {
        return Err(PromptError::MissingDescription(name.to_string()));
    }
    if rules.n_features > table.rows.len() {
        return Err(PromptError::NTooLarge {
            n: rules.n_features,
            rows: table.rows.len(),
        });
    }
    let grid = render_shap_table(table, info, rules.n_features, rules.shap_decimals);
    let result = result_string(table);
    let format_rules = numbered(&rules.format_rules);
    let content_rules = numbered(&rules.content_rules);
    let body = template::BASE.render(&[
        ("dataset_description", &single_line(&info.dataset_description)),
        ("target_description", &single_line(&info.target_description)),
        ("task_description", &single_line(&info.task_description)),
        ("shap_table", &grid),
        ("result_string", &result),
        ("format_rules", &format_rules),
        ("content_rules", &content_rules),
    ])?;
    Ok(PromptText {
        role_tag: RoleTag::Narrator,
        body,
        template: template::BASE.id(),
        warnings: Vec::new(),
    })
}

pub const COHERENCE_FEEDBACK_LABEL: &str = "This is the coherence-issue feedback:";
pub const PREVIOUS_ANSWER_LABEL: &str = "This is your previous answer:";
pub const FAITHFUL_FEEDBACK_LABEL: &str = "This is the faithfulness-issue feedback:";

pub fn build_revision_prompt(
    base: &PromptText,
    last_narrative: &str,
    faithful_feedback: &str,
    coherence_feedback: Option<&str>,
) -> Result<PromptText, PromptError> {
    if base.role_tag != RoleTag::Narrator {
        return Err(PromptError::WrongRole {
            expected: RoleTag::Narrator,
            actual: base.role_tag,
        });
    }
    if last_narrative.trim().is_empty() {
        return Err(PromptError::EmptyNarrative);
    }
    let coherence_section = coherence_feedback
        .map(|fb| format!("{COHERENCE_FEEDBACK_LABEL}{}.\n", normalize_delimiters(fb)))
        .unwrap_or_default();
    let body = template::NARRATOR.render(&[
        ("initial_prompt", &base.body),
        ("last_narrative", &normalize_delimiters(last_narrative)),
        ("faithful_feedback", &normalize_delimiters(faithful_feedback)),
        ("coherence_section", &coherence_section),
    ])?;
    Ok(PromptText {
        role_tag: RoleTag::Narrator,
        body,
        template: template::NARRATOR.id(),
        warnings: Vec::new(),
    })
}

/// Two-column feature listing used inside the extraction prompt.
fn feature_listing(info: &DatasetInfo) -> String {
    if info.feature_descriptions.is_empty() {
        return String::new();
    }
    let width = info
        .feature_descriptions
        .iter()
        .map(|(n, _)| n.chars().count())
        .max()
        .unwrap_or(0)
        .max("feature_name".len());
    let mut out = format!("\n{:<width$}  feature_desc", "feature_name");
    for (name, desc) in &info.feature_descriptions {
        out.push_str(&format!("\n{:<width$}  {}", name, single_line(desc)));
    }
    out
}

pub fn build_extraction_prompt(narrative: &str, info: &DatasetInfo) -> Result<PromptText, PromptError> {
    if narrative.trim().is_empty() {
        return Err(PromptError::EmptyNarrative);
    }
    let mut warnings = Vec::new();
    if info.feature_descriptions.is_empty() {
        tracing::warn!("extraction prompt built without feature descriptions");
        warnings.push("feature descriptions are empty".to_string());
    }
    let body = template::EVALUATOR.render(&[
        ("dataset_description", &single_line(&info.dataset_description)),
        ("target_description", &single_line(&info.target_description)),
        ("task_description", &single_line(&info.task_description)),
        ("feature_descriptions", &feature_listing(info)),
        ("narrative", &normalize_delimiters(narrative.trim())),
    ])?;
    Ok(PromptText {
        role_tag: RoleTag::Evaluator,
        body,
        template: template::EVALUATOR.id(),
        warnings,
    })
}

pub fn build_critic_summary_prompt(combined_feedback: &str) -> Result<PromptText, PromptError> {
    if combined_feedback.trim().is_empty() {
        return Err(PromptError::EmptyFeedback);
    }
    let body = template::CRITIC_SUMMARY
        .render(&[("combined_feedback", &normalize_delimiters(combined_feedback))])?;
    Ok(PromptText {
        role_tag: RoleTag::CriticSummary,
        body,
        template: template::CRITIC_SUMMARY.id(),
        warnings: Vec::new(),
    })
}

pub fn build_coherence_prompt(narrative: &str) -> Result<PromptText, PromptError> {
    if narrative.trim().is_empty() {
        return Err(PromptError::EmptyNarrative);
    }
    let body = template::COHERENCE.render(&[("narrative", &normalize_delimiters(narrative.trim()))])?;
    Ok(PromptText {
        role_tag: RoleTag::Coherence,
        body,
        template: template::COHERENCE.id(),
        warnings: Vec::new(),
    })
}

/// Returns the text fenced between the first pair of `====` delimiter lines.
pub fn fenced_input(prompt: &str) -> Option<&str> {
    let fence = "====================";
    let open = prompt.find(fence)? + fence.len();
    let rest = prompt[open..].strip_prefix('\n')?;
    let close = rest.find(fence)?;
    Some(rest[..close].strip_suffix('\n').unwrap_or(&rest[..close]))
}

/// Pieces of a revision prompt, recovered by label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevisionParts<'a> {
    pub initial_prompt: &'a str,
    pub last_narrative: &'a str,
    pub faithful_feedback: &'a str,
    pub coherence_feedback: Option<&'a str>,
}

pub fn split_revision_prompt(prompt: &str) -> Option<RevisionParts<'_>> {
    const TASK: &str = "This is your initial task: ";
    let task_start = prompt.find(TASK)? + TASK.len();
    let task_end = task_start + prompt[task_start..].find(".\n\nInput text:\n")?;
    let fenced = fenced_input(&prompt[task_end..])?;
    let after_prev = fenced.strip_prefix(PREVIOUS_ANSWER_LABEL)?;
    let fb_at = after_prev.find(&format!(".\n{FAITHFUL_FEEDBACK_LABEL}"))?;
    let last_narrative = &after_prev[..fb_at];
    let after_fb = &after_prev[fb_at + 2 + FAITHFUL_FEEDBACK_LABEL.len()..];
    let (faithful_feedback, coherence_feedback) =
        match after_fb.rfind(&format!(".\n{COHERENCE_FEEDBACK_LABEL}")) {
            Some(at) => {
                let coh = &after_fb[at + 2 + COHERENCE_FEEDBACK_LABEL.len()..];
                (&after_fb[..at], Some(coh.strip_suffix('.').unwrap_or(coh)))
            }
            None => (after_fb.strip_suffix('.').unwrap_or(after_fb), None),
        };
    Some(RevisionParts {
        initial_prompt: &prompt[task_start..task_end],
        last_narrative,
        faithful_feedback,
        coherence_feedback,
    })
}
