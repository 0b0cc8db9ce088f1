use serde::{Deserialize, Serialize};

use super::extraction::{ExtractedFeature, ExtractionRecord};
use crate::model::{ground_truth, ModelError, ShapTable, Sign, TruthEntry};

pub const FAITHFUL_SENTENCE: &str = "After checking, the narrative is 100% faithful to the SHAP table.";

pub const DEFAULT_VALUE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Rank,
    Sign,
    Value,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Rank, Field::Sign, Field::Value];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Rank => "rank",
            Field::Sign => "sign",
            Field::Value => "value",
        }
    }
}

/// Comparison of one ground-truth feature against the narrative's claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCheck {
    pub feature_name: String,
    pub truth_rank: usize,
    pub truth_sign: Sign,
    pub truth_value: f64,
    /// `None` when the narrative does not mention the feature.
    pub extracted: Option<ExtractedFeature>,
    pub rank_error: bool,
    pub sign_error: bool,
    pub value_error: bool,
}

impl FeatureCheck {
    pub fn is_missing(&self) -> bool {
        self.extracted.is_none()
    }

    pub fn error(&self, field: Field) -> bool {
        match field {
            Field::Rank => self.rank_error,
            Field::Sign => self.sign_error,
            Field::Value => self.value_error,
        }
    }

    pub fn has_error(&self) -> bool {
        self.rank_error || self.sign_error || self.value_error
    }

    pub fn error_fields(&self) -> Vec<Field> {
        Field::ALL.into_iter().filter(|f| self.error(*f)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub n: usize,
    /// One check per top-n feature, in ground-truth rank order.
    pub checks: Vec<FeatureCheck>,
    /// Extracted names that do not occur in the SHAP table.
    pub unknown_features: Vec<String>,
    /// Extracted names that occur in the table but outside the top n.
    pub extra_features: Vec<String>,
    /// Top-n features the narrative does not mention.
    pub missing_features: Vec<String>,
    pub feedback_text: String,
}

impl FaithfulnessReport {
    pub fn is_faithful(&self) -> bool {
        self.checks.iter().all(|c| !c.has_error())
            && self.unknown_features.is_empty()
            && self.extra_features.is_empty()
            && self.missing_features.is_empty()
    }

    pub fn error_count(&self, field: Field) -> usize {
        self.checks.iter().filter(|c| c.error(field)).count()
    }

    pub fn total_errors(&self) -> usize {
        Field::ALL.iter().map(|f| self.error_count(*f)).sum()
    }

    pub fn check(&self, feature_name: &str) -> Option<&FeatureCheck> {
        self.checks.iter().find(|c| c.feature_name == feature_name)
    }
}

/// Rule-based comparison of an extraction against the top-n ground truth.
pub fn compare(
    extraction: &ExtractionRecord,
    table: &ShapTable,
    n: usize,
    value_tolerance: f64,
) -> Result<FaithfulnessReport, ModelError> {
    let truth = ground_truth(table, n)?;
    Ok(compare_against(extraction, &truth, table, value_tolerance))
}

pub fn compare_against(
    extraction: &ExtractionRecord,
    truth: &[TruthEntry],
    table: &ShapTable,
    value_tolerance: f64,
) -> FaithfulnessReport {
    let checks: Vec<FeatureCheck> = truth
        .iter()
        .map(|t| {
            let extracted = extraction.get(&t.feature_name).cloned();
            let (rank_error, sign_error, value_error) = match &extracted {
                // An unmentioned feature has neither its rank nor its direction right;
                // its value is treated like an unstated one.
                None => (true, true, false),
                Some(e) => (
                    e.rank != t.rank,
                    e.sign != t.sign,
                    e.value.is_some_and(|v| (v - t.value).abs() > value_tolerance),
                ),
            };
            FeatureCheck {
                feature_name: t.feature_name.clone(),
                truth_rank: t.rank,
                truth_sign: t.sign,
                truth_value: t.value,
                extracted,
                rank_error,
                sign_error,
                value_error,
            }
        })
        .collect();
    let mut unknown_features = Vec::new();
    let mut extra_features = Vec::new();
    for e in extraction.entries() {
        if truth.iter().any(|t| t.feature_name == e.feature_name) {
            continue;
        }
        if table.row(&e.feature_name).is_some() {
            extra_features.push(e.feature_name.clone());
        } else {
            unknown_features.push(e.feature_name.clone());
        }
    }
    let missing_features = checks
        .iter()
        .filter(|c| c.is_missing())
        .map(|c| c.feature_name.clone())
        .collect();
    let mut report = FaithfulnessReport {
        n: truth.len(),
        checks,
        unknown_features,
        extra_features,
        missing_features,
        feedback_text: String::new(),
    };
    report.feedback_text = format_feedback(&report);
    report
}

/// The evaluator's fixed-format feedback: one line per erroneous feature, or the
/// 100%-faithful sentence.
pub fn format_feedback(report: &FaithfulnessReport) -> String {
    let mut lines = Vec::new();
    for check in report.checks.iter().filter(|c| c.has_error()) {
        let list: Vec<String> = check
            .error_fields()
            .iter()
            .map(|f| format!("'{}'", f.as_str()))
            .collect();
        lines.push(format!(
            "Feature {} contains (an) errors in [{}] value.",
            check.feature_name,
            list.join(", ")
        ));
    }
    for name in &report.extra_features {
        lines.push(format!(
            "Feature {name} is not among the {} most important features in the SHAP table.",
            report.n
        ));
    }
    for name in &report.unknown_features {
        lines.push(format!("Feature {name} does not exist in the SHAP table."));
    }
    if lines.is_empty() {
        FAITHFUL_SENTENCE.to_string()
    } else {
        lines.join("\n")
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::FeatureRow;

    pub(crate) fn student() -> ShapTable {
        let rows = [
            ("failures", -0.31, 0.0),
            ("goout", -0.12, 4.0),
            ("Walc", -0.08, 3.0),
            ("famsup", 0.05, 1.0),
            ("age", 0.01, 17.0),
        ];
        ShapTable {
            dataset_id: "student".into(),
            instance_id: "9".into(),
            predicted_class: 1,
            probability_class1: 0.62,
            rows: rows
                .iter()
                .map(|(n, s, v)| FeatureRow {
                    feature_name: n.to_string(),
                    shap_value: *s,
                    feature_value: *v,
                    feature_average: 0.0,
                    feature_description: String::new(),
                })
                .collect(),
        }
    }

    fn entry(name: &str, rank: usize, sign: Sign, value: Option<f64>) -> ExtractedFeature {
        ExtractedFeature {
            feature_name: name.into(),
            rank,
            sign,
            value,
            assumption: None,
        }
    }

    fn truthful() -> Vec<ExtractedFeature> {
        vec![
            entry("failures", 0, Sign::Negative, Some(0.0)),
            entry("goout", 1, Sign::Negative, Some(4.0)),
            entry("Walc", 2, Sign::Negative, Some(3.0)),
            entry("famsup", 3, Sign::Positive, Some(1.0)),
        ]
    }

    #[test]
    fn identical_extraction_is_faithful() {
        let rec = ExtractionRecord::new(truthful()).unwrap();
        let report = compare(&rec, &student(), 4, DEFAULT_VALUE_TOLERANCE).unwrap();
        assert!(report.is_faithful());
        assert_eq!(report.feedback_text, FAITHFUL_SENTENCE);
        assert_eq!(report.total_errors(), 0);
    }

    #[test]
    fn narrator_example_errors() {
        // goout and failures swapped, goout value 5 instead of 4, Walc claimed positive
        let rec = ExtractionRecord::new(vec![
            entry("goout", 0, Sign::Negative, Some(5.0)),
            entry("failures", 1, Sign::Negative, Some(0.0)),
            entry("Walc", 2, Sign::Positive, Some(3.0)),
            entry("famsup", 3, Sign::Positive, Some(1.0)),
        ])
        .unwrap();
        let report = compare(&rec, &student(), 4, DEFAULT_VALUE_TOLERANCE).unwrap();
        let flags = |n: &str| {
            let c = report.check(n).unwrap();
            (c.rank_error, c.sign_error, c.value_error)
        };
        assert_eq!(flags("failures"), (true, false, false));
        assert_eq!(flags("goout"), (true, false, true));
        assert_eq!(flags("Walc"), (false, true, false));
        assert_eq!(flags("famsup"), (false, false, false));
        assert_eq!(
            report.feedback_text,
            "Feature failures contains (an) errors in ['rank'] value.\n\
             Feature goout contains (an) errors in ['rank', 'value'] value.\n\
             Feature Walc contains (an) errors in ['sign'] value."
        );
    }

    #[test]
    fn null_values_are_correct() {
        let entries = truthful()
            .into_iter()
            .map(|mut e| {
                e.value = None;
                e
            })
            .collect();
        let mut table = student();
        for r in &mut table.rows {
            r.feature_value += 100.0;
        }
        let report = compare(&ExtractionRecord::new(entries).unwrap(), &table, 4, 1e-6).unwrap();
        assert_eq!(report.error_count(Field::Value), 0);
    }

    #[test]
    fn missing_unknown_and_extra() {
        let rec = ExtractionRecord::new(vec![
            entry("failures", 0, Sign::Negative, Some(0.0)),
            entry("goout", 1, Sign::Negative, Some(4.0)),
            entry("Walc", 2, Sign::Negative, None),
            entry("age2", 3, Sign::Positive, Some(1.0)),
            entry("age", 4, Sign::Positive, Some(17.0)),
        ])
        .unwrap();
        let report = compare(&rec, &student(), 4, 1e-6).unwrap();
        assert_eq!(report.missing_features, ["famsup"]);
        assert_eq!(report.unknown_features, ["age2"]);
        assert_eq!(report.extra_features, ["age"]);
        let famsup = report.check("famsup").unwrap();
        assert!(famsup.rank_error && famsup.sign_error && !famsup.value_error);
        assert!(!report.is_faithful());
        assert!(report
            .feedback_text
            .ends_with("Feature age2 does not exist in the SHAP table."));
        assert!(report.feedback_text.contains(
            "Feature age is not among the 4 most important features in the SHAP table."
        ));
    }

    #[test]
    fn tolerance_boundary() {
        let mut entries = truthful();
        entries[1].value = Some(4.0 + 5e-7);
        let report = compare(&ExtractionRecord::new(entries.clone()).unwrap(), &student(), 4, 1e-6).unwrap();
        assert!(report.is_faithful());
        entries[1].value = Some(4.1);
        let report = compare(&ExtractionRecord::new(entries).unwrap(), &student(), 4, 1e-6).unwrap();
        assert_eq!(report.error_count(Field::Value), 1);
    }

    #[test]
    fn n_too_large() {
        let rec = ExtractionRecord::default();
        assert!(compare(&rec, &student(), 6, 1e-6).is_err());
    }
}
