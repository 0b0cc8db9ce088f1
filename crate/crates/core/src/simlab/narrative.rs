use std::sync::OnceLock;

use regex::Regex;

use super::{FaultPlan, SimError};
use crate::evaluator::{ExtractedFeature, ExtractionRecord};
use crate::model::{ground_truth, natural_number, ShapTable, Sign};

const ORDINAL_WORDS: [&str; 20] = [
    "", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
    "eleventh", "twelfth", "thirteenth", "fourteenth", "fifteenth", "sixteenth", "seventeenth",
    "eighteenth", "nineteenth", "twentieth",
];

pub const CLOSING: &str = "Together, these features drive the prediction for this instance.";

/// Word placed before "most important" for position `k` (empty for the first).
pub fn ordinal_word(k: usize) -> String {
    match ORDINAL_WORDS.get(k) {
        Some(w) => w.to_string(),
        None => crate::critic::ordinal(k + 1),
    }
}

fn position_of(word: Option<&str>) -> Option<usize> {
    let Some(word) = word else { return Some(0) };
    let lower = word.to_lowercase();
    if let Some(k) = ORDINAL_WORDS.iter().skip(1).position(|w| *w == lower) {
        return Some(k + 1);
    }
    let digits: String = lower.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse::<usize>().ok().filter(|&k| k >= 1).map(|k| k - 1)
}

fn sentence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"The (?:(\S+) )?most important feature is (.+?)(?:, with a value of (\S+?))?, which has a (positive|negative) influence on the prediction\.",
        )
        .expect("valid regex")
    })
}

/// One feature sentence of a templated narrative.
#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub feature_name: String,
    pub sign: Sign,
    pub value: Option<f64>,
}

impl Claim {
    fn sentence(&self, position: usize) -> String {
        let word = ordinal_word(position);
        let lead = if word.is_empty() {
            "The most important feature".to_string()
        } else {
            format!("The {word} most important feature")
        };
        let value = self
            .value
            .map(|v| format!(", with a value of {}", natural_number(v)))
            .unwrap_or_default();
        format!(
            "{lead} is {}{value}, which has a {} influence on the prediction.",
            self.feature_name,
            self.sign.word()
        )
    }
}

/// A narrative in the simulation template: opener, ordered feature sentences, closing.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplatedNarrative {
    pub opener: String,
    pub claims: Vec<Claim>,
    pub closing: String,
}

impl TemplatedNarrative {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut positioned = Vec::new();
        let mut first_start = None;
        let mut last_end = 0;
        for caps in sentence_re().captures_iter(text) {
            let whole = caps.get(0).expect("match");
            first_start.get_or_insert(whole.start());
            last_end = whole.end();
            let position = position_of(caps.get(1).map(|m| m.as_str()))
                .ok_or_else(|| SimError::NotTemplated(format!("unknown ordinal in `{}`", whole.as_str())))?;
            let value = match caps.get(3) {
                Some(v) => Some(v.as_str().parse::<f64>().map_err(|_| {
                    SimError::NotTemplated(format!("value `{}` is not a number", v.as_str()))
                })?),
                None => None,
            };
            let sign = if &caps[4] == "negative" { Sign::Negative } else { Sign::Positive };
            positioned.push((
                position,
                Claim {
                    feature_name: caps[2].to_string(),
                    sign,
                    value,
                },
            ));
        }
        let Some(first_start) = first_start else {
            return Err(SimError::NotTemplated("no feature sentences".into()));
        };
        positioned.sort_by_key(|(p, _)| *p);
        Ok(TemplatedNarrative {
            opener: text[..first_start].trim().to_string(),
            claims: positioned.into_iter().map(|(_, c)| c).collect(),
            closing: text[last_end..].trim().to_string(),
        })
    }

    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        if !self.opener.is_empty() {
            parts.push(self.opener.clone());
        }
        parts.extend(self.claims.iter().enumerate().map(|(i, c)| c.sentence(i)));
        if !self.closing.is_empty() {
            parts.push(self.closing.clone());
        }
        parts.join(" ")
    }

    pub fn extraction(&self) -> ExtractionRecord {
        let entries = self
            .claims
            .iter()
            .enumerate()
            .map(|(rank, c)| ExtractedFeature {
                feature_name: c.feature_name.clone(),
                rank,
                sign: c.sign,
                value: c.value,
                assumption: None,
            })
            .collect();
        // Names are unique in every rendering we produce; a hand-edited duplicate keeps the first.
        match ExtractionRecord::new(entries) {
            Ok(r) => r,
            Err(_) => {
                let mut seen = std::collections::HashSet::new();
                let kept: Vec<ExtractedFeature> = self
                    .claims
                    .iter()
                    .filter(|c| seen.insert(c.feature_name.clone()))
                    .enumerate()
                    .map(|(rank, c)| ExtractedFeature {
                        feature_name: c.feature_name.clone(),
                        rank,
                        sign: c.sign,
                        value: c.value,
                        assumption: None,
                    })
                    .collect();
                ExtractionRecord::new(kept).expect("deduplicated, contiguous ranks")
            }
        }
    }
}

pub fn opener(predicted_class: u8, probability_class1: f64) -> String {
    format!(
        "The model predicts class {predicted_class} with a probability of {} for class 1.",
        natural_number(probability_class1)
    )
}

/// Renders the top-n ground truth of `table` with the plan's faults applied.
pub fn render_templated_narrative(
    table: &ShapTable,
    n: usize,
    plan: &FaultPlan,
) -> Result<String, SimError> {
    let truth = ground_truth(table, n)?;
    plan.check(&truth)?;
    let mut claims: Vec<Claim> = truth
        .iter()
        .map(|t| Claim {
            feature_name: t.feature_name.clone(),
            sign: t.sign,
            value: Some(t.value),
        })
        .collect();
    for &(i, j) in &plan.rank_swaps {
        claims.swap(i, j);
    }
    for name in &plan.sign_flips {
        let c = claims.iter_mut().find(|c| &c.feature_name == name).expect("checked");
        c.sign = c.sign.flipped();
    }
    for (name, delta) in &plan.value_perturbations {
        let c = claims.iter_mut().find(|c| &c.feature_name == name).expect("checked");
        c.value = c.value.map(|v| v + delta);
    }
    Ok(TemplatedNarrative {
        opener: opener(table.predicted_class, table.probability_class1),
        claims,
        closing: CLOSING.to_string(),
    }
    .render())
}

/// Exact recovery of the claims in a templated narrative.
pub fn oracle_extract(narrative: &str) -> Result<ExtractionRecord, SimError> {
    Ok(TemplatedNarrative::parse(narrative)?.extraction())
}
