//! Ground-truth attribution data: SHAP tables, dataset metadata and narrative records.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("table has no rows")]
    EmptyTable,
    #[error("duplicate feature `{0}`")]
    DuplicateFeature(String),
    #[error("n = {n} exceeds the {rows} rows of the table")]
    NTooLarge { n: usize, rows: usize },
    #[error("n must be at least 1")]
    NTooSmall,
}

/// Direction of a feature's influence on the class-1 prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Negative,
    Positive,
}

impl Sign {
    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Negative => -1,
            Sign::Positive => 1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Sign> {
        match v {
            -1 => Some(Sign::Negative),
            1 => Some(Sign::Positive),
            _ => None,
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Negative => Sign::Positive,
            Sign::Positive => Sign::Negative,
        }
    }

    /// "positive" / "negative"
    pub fn word(self) -> &'static str {
        match self {
            Sign::Negative => "negative",
            Sign::Positive => "positive",
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sign::Negative => f.write_str("-1"),
            Sign::Positive => f.write_str("+1"),
        }
    }
}

impl Serialize for Sign {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Sign {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Sign::from_i64(v).ok_or_else(|| serde::de::Error::custom(format!("sign must be -1 or +1, got {v}")))
    }
}

/// Sign assigned to an attribution of exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroSign {
    #[default]
    Positive,
    Negative,
}

impl ZeroSign {
    pub fn sign_of(self, shap_value: f64) -> Sign {
        if shap_value > 0.0 {
            Sign::Positive
        } else if shap_value < 0.0 {
            Sign::Negative
        } else {
            match self {
                ZeroSign::Positive => Sign::Positive,
                ZeroSign::Negative => Sign::Negative,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub feature_name: String,
    pub shap_value: f64,
    pub feature_value: f64,
    pub feature_average: f64,
    pub feature_description: String,
}

/// Attribution rows for one instance, ordered by |shap_value| descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapTable {
    pub dataset_id: String,
    pub instance_id: String,
    pub predicted_class: u8,
    pub probability_class1: f64,
    pub rows: Vec<FeatureRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadWarning {
    /// Input rows were not in |shap_value| order and have been re-sorted.
    Resorted,
}

#[derive(Debug, Clone)]
pub struct LoadedTable {
    pub table: ShapTable,
    pub warnings: Vec<LoadWarning>,
}

/// One entry of the ground truth for the top-n features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub feature_name: String,
    pub rank: usize,
    pub sign: Sign,
    pub value: f64,
}

impl ShapTable {
    /// Checks every table invariant except ordering, then stable-sorts rows by |shap_value|.
    pub fn validated(mut self) -> Result<LoadedTable, ModelError> {
        if self.rows.is_empty() {
            return Err(ModelError::EmptyTable);
        }
        if self.predicted_class > 1 {
            return Err(ModelError::Schema(format!(
                "predicted_class must be 0 or 1, got {}",
                self.predicted_class
            )));
        }
        if !(0.0..=1.0).contains(&self.probability_class1) {
            return Err(ModelError::Schema(format!(
                "probability_class1 must lie in [0, 1], got {}",
                self.probability_class1
            )));
        }
        let mut seen = HashSet::new();
        for (i, row) in self.rows.iter().enumerate() {
            if row.feature_name.is_empty() {
                return Err(ModelError::Schema(format!("rows[{i}].feature_name is empty")));
            }
            // The rendered prompt grid is pipe-delimited and line-based.
            if row.feature_name.contains(['|', '\n', '\r']) {
                return Err(ModelError::Schema(format!(
                    "rows[{i}].feature_name contains a reserved character"
                )));
            }
            for (field, v) in [
                ("shap_value", row.shap_value),
                ("feature_value", row.feature_value),
                ("feature_average", row.feature_average),
            ] {
                if !v.is_finite() {
                    return Err(ModelError::Schema(format!("rows[{i}].{field} is not finite")));
                }
            }
            if !seen.insert(row.feature_name.as_str()) {
                return Err(ModelError::DuplicateFeature(row.feature_name.clone()));
            }
        }
        let mut warnings = Vec::new();
        let sorted = self
            .rows
            .windows(2)
            .all(|w| w[0].shap_value.abs() >= w[1].shap_value.abs());
        if !sorted {
            self.rows
                .sort_by(|a, b| b.shap_value.abs().total_cmp(&a.shap_value.abs()));
            warnings.push(LoadWarning::Resorted);
        }
        Ok(LoadedTable {
            table: self,
            warnings,
        })
    }

    pub fn row(&self, feature_name: &str) -> Option<(usize, &FeatureRow)> {
        self.rows
            .iter()
            .enumerate()
            .find(|(_, r)| r.feature_name == feature_name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

/// Parses and validates one SHAP-table file.
pub fn load_shap_table(bytes: &[u8]) -> Result<LoadedTable, ModelError> {
    let table: ShapTable =
        serde_json::from_slice(bytes).map_err(|e| ModelError::Schema(e.to_string()))?;
    table.validated()
}

pub fn ground_truth(table: &ShapTable, n: usize) -> Result<Vec<TruthEntry>, ModelError> {
    ground_truth_with(table, n, ZeroSign::default())
}

pub fn ground_truth_with(
    table: &ShapTable,
    n: usize,
    zero: ZeroSign,
) -> Result<Vec<TruthEntry>, ModelError> {
    if n == 0 {
        return Err(ModelError::NTooSmall);
    }
    if n > table.rows.len() {
        return Err(ModelError::NTooLarge {
            n,
            rows: table.rows.len(),
        });
    }
    Ok(table.rows[..n]
        .iter()
        .enumerate()
        .map(|(rank, row)| TruthEntry {
            feature_name: row.feature_name.clone(),
            rank,
            sign: zero.sign_of(row.shap_value),
            value: row.feature_value,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub dataset_description: String,
    pub target_description: String,
    pub task_description: String,
    pub feature_descriptions: Vec<(String, String)>,
}

impl DatasetInfo {
    pub fn description_of(&self, feature_name: &str) -> Option<&str> {
        self.feature_descriptions
            .iter()
            .find(|(name, _)| name == feature_name)
            .map(|(_, d)| d.as_str())
    }

    pub fn load(bytes: &[u8]) -> Result<DatasetInfo, ModelError> {
        serde_json::from_slice(bytes).map_err(|e| ModelError::Schema(e.to_string()))
    }

    /// Names of table features that have no description.
    pub fn undescribed<'a>(&self, table: &'a ShapTable) -> Vec<&'a str> {
        table
            .rows
            .iter()
            .filter(|r| self.description_of(&r.feature_name).is_none())
            .map(|r| r.feature_name.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NarrativeOrigin {
    BaselineFile,
    NarratorGenerated,
    NarratorRevised,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeRecord {
    pub instance_id: String,
    pub round_index: usize,
    pub body: String,
    pub origin: NarrativeOrigin,
}

impl NarrativeRecord {
    pub fn new(
        instance_id: impl Into<String>,
        round_index: usize,
        body: impl Into<String>,
        origin: NarrativeOrigin,
    ) -> Result<Self, ModelError> {
        let body = body.into();
        if body.trim().is_empty() {
            return Err(ModelError::Schema("narrative body is empty".into()));
        }
        if round_index == 0 && origin == NarrativeOrigin::NarratorRevised {
            return Err(ModelError::Schema(
                "a round-0 narrative cannot be a revision".into(),
            ));
        }
        Ok(NarrativeRecord {
            instance_id: instance_id.into(),
            round_index,
            body,
            origin,
        })
    }
}

/// Renders a number without trailing zeros: integers unpadded, other values in
/// shortest round-trip form.
pub fn natural_number(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, shap: f64, value: f64) -> FeatureRow {
        FeatureRow {
            feature_name: name.into(),
            shap_value: shap,
            feature_value: value,
            feature_average: 0.0,
            feature_description: String::new(),
        }
    }

    fn table(rows: Vec<FeatureRow>) -> ShapTable {
        ShapTable {
            dataset_id: "d".into(),
            instance_id: "0".into(),
            predicted_class: 1,
            probability_class1: 0.7,
            rows,
        }
    }

    #[test]
    fn loads_fifa_rows_in_order() {
        let json = r#"{"dataset_id":"fifa","instance_id":"3","predicted_class":1,
            "probability_class1":0.61,"rows":[
            {"feature_name":"Goals","shap_value":0.135,"feature_value":2,"feature_average":1.5,"feature_description":"goals scored"},
            {"feature_name":"Attempts","shap_value":-0.120,"feature_value":12,"feature_average":12.5,"feature_description":"shots"}]}"#;
        let loaded = load_shap_table(json.as_bytes()).unwrap();
        assert!(loaded.warnings.is_empty());
        let truth = ground_truth(&loaded.table, 2).unwrap();
        assert_eq!(truth[0].feature_name, "Goals");
        assert_eq!(truth[0].rank, 0);
        assert_eq!(truth[1].feature_name, "Attempts");
        assert_eq!(truth[1].sign, Sign::Negative);
        assert_eq!(truth[1].value, 12.0);
    }

    #[test]
    fn single_zero_row_is_positive() {
        let loaded = table(vec![row("a", 0.0, 1.0)]).validated().unwrap();
        let truth = ground_truth(&loaded.table, 1).unwrap();
        assert_eq!(truth[0].sign, Sign::Positive);
        let neg = ground_truth_with(&loaded.table, 1, ZeroSign::Negative).unwrap();
        assert_eq!(neg[0].sign, Sign::Negative);
    }

    #[test]
    fn resorts_with_warning() {
        let loaded = table(vec![row("a", 0.1, 1.0), row("b", -0.3, 2.0)])
            .validated()
            .unwrap();
        assert_eq!(loaded.warnings, vec![LoadWarning::Resorted]);
        assert_eq!(loaded.table.rows[0].feature_name, "b");
    }

    #[test]
    fn ties_keep_file_order() {
        let loaded = table(vec![
            row("small", 0.1, 0.0),
            row("x", 0.5, 0.0),
            row("y", -0.5, 0.0),
        ])
        .validated()
        .unwrap();
        let names: Vec<_> = loaded.table.rows.iter().map(|r| r.feature_name.as_str()).collect();
        assert_eq!(names, ["x", "y", "small"]);
    }

    #[test]
    fn rejects_bad_tables() {
        assert_eq!(table(vec![]).validated().unwrap_err(), ModelError::EmptyTable);
        assert_eq!(
            table(vec![row("a", 0.2, 0.0), row("a", 0.1, 0.0)])
                .validated()
                .unwrap_err(),
            ModelError::DuplicateFeature("a".into())
        );
        let err = load_shap_table(br#"{"dataset_id":"d","instance_id":"1"}"#).unwrap_err();
        assert!(matches!(err, ModelError::Schema(ref m) if m.contains("predicted_class")));
        let err = load_shap_table(
            br#"{"dataset_id":"d","instance_id":"1","predicted_class":1,"probability_class1":0.5,
                "rows":[{"feature_name":"a","shap_value":"x","feature_value":1,"feature_average":1,"feature_description":""}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Schema(_)));
    }

    #[test]
    fn ground_truth_signs_and_bounds() {
        let t = table(vec![row("a", -0.5, 3.0), row("b", 0.2, 1.0)]);
        let truth = ground_truth(&t, 2).unwrap();
        assert_eq!(
            truth.iter().map(|e| (e.rank, e.sign)).collect::<Vec<_>>(),
            [(0, Sign::Negative), (1, Sign::Positive)]
        );
        assert_eq!(ground_truth(&t, 2).unwrap(), truth);
        assert_eq!(
            ground_truth(&t, 3).unwrap_err(),
            ModelError::NTooLarge { n: 3, rows: 2 }
        );
    }

    #[test]
    fn narrative_record_invariants() {
        assert!(NarrativeRecord::new("1", 0, "x", NarrativeOrigin::NarratorRevised).is_err());
        assert!(NarrativeRecord::new("1", 0, "  ", NarrativeOrigin::BaselineFile).is_err());
        assert!(NarrativeRecord::new("1", 2, "x", NarrativeOrigin::NarratorRevised).is_ok());
    }

    #[test]
    fn natural_numbers() {
        assert_eq!(natural_number(4.0), "4");
        assert_eq!(natural_number(-0.0), "0");
        assert_eq!(natural_number(1.5), "1.5");
        assert_eq!(natural_number(0.263), "0.263");
    }
}
