use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::literal::{find_dict, Literal};
use crate::model::{natural_number, DatasetInfo, Sign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedFeature {
    pub feature_name: String,
    pub rank: usize,
    pub sign: Sign,
    /// `None` when the narrative gives no exact value.
    pub value: Option<f64>,
    pub assumption: Option<String>,
}

/// Per-feature claims recovered from one narrative, ordered by rank 0, 1, …, k-1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractionRecord {
    entries: Vec<ExtractedFeature>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractionError {
    #[error("no dictionary literal found in the answer")]
    Parse(String),
    #[error("ranks are not 0..k-1 in listed order: {0:?}")]
    RankSequence(Vec<usize>),
    #[error("feature `{feature}` has sign {found}, expected -1 or +1")]
    SignDomain { feature: String, found: String },
    #[error("feature `{feature}` has a non-numeric value `{found}`")]
    NonNumericValue { feature: String, found: String },
    #[error("feature `{0}` appears more than once")]
    DuplicateFeature(String),
    #[error("answer is empty")]
    EmptyAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractionWarning {
    /// Ranks were not 0..k-1 in listed order and were re-indexed.
    RankRepaired { original: Vec<Option<i64>> },
    /// A feature name only matched the dataset after trimming whitespace.
    NameTrimmed { original: String },
    /// A feature name matches no described feature.
    UnknownFeature { name: String },
    /// A repeated feature key; the first occurrence was kept.
    DuplicateDropped { name: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedExtraction {
    pub record: ExtractionRecord,
    pub warnings: Vec<ExtractionWarning>,
}

impl ExtractionRecord {
    /// Validates that names are unique and ranks are exactly 0..k-1 in listed order.
    pub fn new(entries: Vec<ExtractedFeature>) -> Result<Self, ExtractionError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.feature_name.as_str()) {
                return Err(ExtractionError::DuplicateFeature(e.feature_name.clone()));
            }
        }
        if entries.iter().enumerate().any(|(i, e)| e.rank != i) {
            return Err(ExtractionError::RankSequence(entries.iter().map(|e| e.rank).collect()));
        }
        Ok(ExtractionRecord { entries })
    }

    /// Stable-sorts by claimed rank and re-indexes to 0..k-1. The flag reports whether
    /// anything changed.
    pub fn repaired(mut entries: Vec<ExtractedFeature>) -> Result<(Self, bool), ExtractionError> {
        let before: Vec<usize> = entries.iter().map(|e| e.rank).collect();
        entries.sort_by_key(|e| e.rank);
        for (i, e) in entries.iter_mut().enumerate() {
            e.rank = i;
        }
        let changed = before.iter().enumerate().any(|(i, &r)| r != i);
        Ok((ExtractionRecord::new(entries)?, changed))
    }

    pub fn entries(&self) -> &[ExtractedFeature] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<ExtractedFeature> {
        self.entries
    }

    pub fn get(&self, feature_name: &str) -> Option<&ExtractedFeature> {
        self.entries.iter().find(|e| e.feature_name == feature_name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Renders the record the way the extraction prompt asks a model to answer.
    pub fn to_literal(&self) -> String {
        let body: Vec<String> = self
            .entries
            .iter()
            .map(|e| {
                let value = e.value.map(natural_number).unwrap_or_else(|| "None".into());
                let assumption = e.assumption.as_deref().unwrap_or("None");
                format!(
                    "{}: {{'rank': {}, 'sign': {}, 'value': {}, 'assumption': {}}}",
                    py_str(&e.feature_name),
                    e.rank,
                    e.sign.as_i8(),
                    value,
                    py_str(assumption)
                )
            })
            .collect();
        format!("{{{}}}", body.join(", "))
    }
}

fn py_str(s: &str) -> String {
    format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'").replace('\n', "\\n"))
}

fn inner_key(key: &str) -> String {
    key.trim().trim_end_matches(':').trim().to_ascii_lowercase()
}

fn literal_text(lit: &Literal) -> String {
    match lit {
        Literal::Str(s) | Literal::Ident(s) => s.clone(),
        Literal::Int(i) => i.to_string(),
        Literal::Float(f) => f.to_string(),
        Literal::Bool(b) => b.to_string(),
        Literal::Null => "None".into(),
        other => format!("{other:?}"),
    }
}

fn is_null_word(s: &str) -> bool {
    matches!(s.trim().to_ascii_lowercase().as_str(), "none" | "null" | "nan" | "n/a" | "")
}

fn parse_sign(feature: &str, lit: Option<&Literal>) -> Result<Sign, ExtractionError> {
    let bad = |found: String| ExtractionError::SignDomain {
        feature: feature.to_string(),
        found,
    };
    let Some(lit) = lit else {
        return Err(bad("<missing>".into()));
    };
    let numeric = match lit {
        Literal::Int(i) => Some(*i as f64),
        Literal::Float(f) => Some(*f),
        Literal::Str(s) | Literal::Ident(s) => match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "+" => Some(1.0),
            "negative" | "-" => Some(-1.0),
            other => other.trim_start_matches('+').parse::<f64>().ok(),
        },
        _ => None,
    };
    match numeric {
        Some(1.0) => Ok(Sign::Positive),
        Some(-1.0) => Ok(Sign::Negative),
        _ => Err(bad(literal_text(lit))),
    }
}

fn parse_value(feature: &str, lit: Option<&Literal>) -> Result<Option<f64>, ExtractionError> {
    let bad = |found: String| ExtractionError::NonNumericValue {
        feature: feature.to_string(),
        found,
    };
    match lit {
        None | Some(Literal::Null) => Ok(None),
        Some(Literal::Int(i)) => Ok(Some(*i as f64)),
        Some(Literal::Float(f)) if f.is_finite() => Ok(Some(*f)),
        Some(Literal::Float(f)) => Err(bad(f.to_string())),
        Some(Literal::Bool(b)) => Ok(Some(if *b { 1.0 } else { 0.0 })),
        Some(Literal::Str(s)) | Some(Literal::Ident(s)) => {
            if is_null_word(s) {
                return Ok(None);
            }
            let cleaned = s.trim().trim_end_matches('%').replace(',', "");
            cleaned
                .trim_start_matches('+')
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| bad(s.clone()))
        }
        Some(other) => Err(bad(literal_text(other))),
    }
}

fn parse_rank(lit: Option<&Literal>) -> Option<i64> {
    match lit? {
        Literal::Int(i) => Some(*i),
        Literal::Float(f) if f.fract() == 0.0 => Some(*f as i64),
        Literal::Str(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Tolerant parse of an extraction answer.
///
/// Accepts fenced or prose-wrapped dictionary literals with single- or
/// double-quoted keys. Ranks that are not 0..k-1 in listed order are repaired by
/// stable-sorting on the claimed rank and re-indexing.
pub fn parse_extraction(answer: &str, info: &DatasetInfo) -> Result<ParsedExtraction, ExtractionError> {
    if answer.trim().is_empty() {
        return Err(ExtractionError::EmptyAnswer);
    }
    let Some(Literal::Dict(features)) = find_dict(answer) else {
        return Err(ExtractionError::Parse(answer.chars().take(200).collect()));
    };
    let known: HashSet<&str> = info.feature_descriptions.iter().map(|(n, _)| n.as_str()).collect();
    let mut warnings = Vec::new();
    let mut raw_ranks = Vec::new();
    let mut entries: Vec<(Option<i64>, ExtractedFeature)> = Vec::new();
    for (raw_name, fields) in features {
        let name = if known.contains(raw_name.as_str()) {
            raw_name
        } else {
            let trimmed = raw_name.trim().to_string();
            if known.contains(trimmed.as_str()) {
                warnings.push(ExtractionWarning::NameTrimmed { original: raw_name });
            } else {
                warnings.push(ExtractionWarning::UnknownFeature { name: trimmed.clone() });
            }
            trimmed
        };
        if entries.iter().any(|(_, e)| e.feature_name == name) {
            warnings.push(ExtractionWarning::DuplicateDropped { name });
            continue;
        }
        let fields = match fields {
            Literal::Dict(f) => f,
            other => {
                return Err(ExtractionError::Parse(format!(
                    "feature `{name}` maps to {other:?} instead of a dictionary"
                )))
            }
        };
        let field = |key: &str| fields.iter().find(|(k, _)| inner_key(k) == key).map(|(_, v)| v);
        let rank = parse_rank(field("rank"));
        let sign = parse_sign(&name, field("sign"))?;
        let value = parse_value(&name, field("value"))?;
        let assumption = field("assumption").and_then(|a| {
            let text = literal_text(a);
            (!is_null_word(&text)).then_some(text)
        });
        raw_ranks.push(rank);
        entries.push((
            rank,
            ExtractedFeature {
                feature_name: name,
                rank: 0,
                sign,
                value,
                assumption,
            },
        ));
    }
    // Missing or negative ranks sort after every valid one, keeping listed order.
    let keyed: Vec<ExtractedFeature> = entries
        .into_iter()
        .enumerate()
        .map(|(pos, (rank, mut e))| {
            e.rank = match rank {
                Some(r) if r >= 0 => r as usize,
                _ => usize::MAX / 2 + pos,
            };
            e
        })
        .collect();
    let (record, changed) = ExtractionRecord::repaired(keyed)?;
    if changed || raw_ranks.iter().any(|r| r.is_none_or(|r| r < 0)) {
        warnings.push(ExtractionWarning::RankRepaired { original: raw_ranks });
    }
    Ok(ParsedExtraction { record, warnings })
}
