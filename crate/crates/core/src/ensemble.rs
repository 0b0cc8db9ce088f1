//! Field-level majority voting over independent extractions of one narrative.
//!
//! Per feature, presence is voted over the whole panel (a voter that does not list
//! the feature votes "absent"). For present features, rank, sign and value are
//! each decided by strict majority among the voters that list the feature. Without
//! a strict majority the designated primary evaluator's choice is taken. Values
//! within the tolerance of each other form a single candidate. The result is
//! independent of the order of voters in the panel.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::compare::DEFAULT_VALUE_TOLERANCE;
use crate::evaluator::{ExtractedFeature, ExtractionRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VoteError {
    #[error("a panel needs at least two extractions, got {0}")]
    PanelTooSmall(usize),
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotePanel {
    pub extractions: Vec<ExtractionRecord>,
    pub evaluator_ids: Vec<String>,
    pub designated_primary: String,
    pub value_tolerance: f64,
}

impl VotePanel {
    pub fn new(
        votes: Vec<(String, ExtractionRecord)>,
        designated_primary: impl Into<String>,
    ) -> Result<Self, VoteError> {
        let (evaluator_ids, extractions) = votes.into_iter().unzip();
        let panel = VotePanel {
            extractions,
            evaluator_ids,
            designated_primary: designated_primary.into(),
            value_tolerance: DEFAULT_VALUE_TOLERANCE,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn with_tolerance(mut self, value_tolerance: f64) -> Self {
        self.value_tolerance = value_tolerance;
        self
    }

    pub fn validate(&self) -> Result<(), VoteError> {
        if self.extractions.len() != self.evaluator_ids.len() {
            return Err(VoteError::InvalidPanel(format!(
                "{} extractions for {} evaluator ids",
                self.extractions.len(),
                self.evaluator_ids.len()
            )));
        }
        if self.extractions.len() < 2 {
            return Err(VoteError::PanelTooSmall(self.extractions.len()));
        }
        let mut ids: Vec<&String> = self.evaluator_ids.iter().collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(VoteError::InvalidPanel("evaluator ids must be unique".into()));
        }
        if !self.evaluator_ids.contains(&self.designated_primary) {
            return Err(VoteError::InvalidPanel(format!(
                "designated primary `{}` is not on the panel",
                self.designated_primary
            )));
        }
        Ok(())
    }
}

/// Voters listing one feature, keyed by evaluator id so iteration order is canonical.
type Holders<'a> = BTreeMap<&'a str, &'a ExtractedFeature>;

/// Strict-majority choice among holders; falls back to the primary (or, when the
/// primary does not hold the feature, to the smallest evaluator id) on no majority.
fn decide<'a, T: Clone + PartialEq>(
    holders: &Holders<'a>,
    primary: &str,
    same: impl Fn(&T, &T) -> bool,
    get: impl Fn(&ExtractedFeature) -> T,
) -> T {
    // candidate clusters: (representative, members)
    let mut clusters: Vec<(T, Vec<&str>)> = Vec::new();
    for (&id, feature) in holders {
        let v = get(feature);
        match clusters.iter_mut().find(|(rep, _)| same(rep, &v)) {
            Some((_, members)) => members.push(id),
            None => clusters.push((v, vec![id])),
        }
    }
    let total = holders.len();
    let fallback = if holders.contains_key(primary) {
        primary
    } else {
        holders.keys().next().copied().expect("at least one holder")
    };
    let winner = clusters
        .iter()
        .find(|(_, m)| 2 * m.len() > total)
        .or_else(|| clusters.iter().find(|(_, m)| m.contains(&fallback)))
        .expect("fallback voter belongs to a cluster");
    // The primary's own value represents its cluster when it is a member.
    if winner.1.contains(&primary) {
        get(holders[primary])
    } else {
        get(holders[winner.1[0]])
    }
}

fn cluster_values(values: &mut [(Option<f64>, &str)], tolerance: f64) -> Vec<Vec<usize>> {
    // Single-linkage clusters over sorted values; null is its own candidate.
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| match (values[a].0, values[b].0) {
        (None, None) => values[a].1.cmp(values[b].1),
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(&y).then(values[a].1.cmp(values[b].1)),
    });
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut prev: Option<Option<f64>> = None;
    for idx in order {
        let v = values[idx].0;
        let joins = match (prev, v) {
            (Some(None), None) => true,
            (Some(Some(p)), Some(x)) => (x - p).abs() <= tolerance,
            _ => false,
        };
        if joins {
            clusters.last_mut().expect("cluster exists").push(idx);
        } else {
            clusters.push(vec![idx]);
        }
        prev = Some(v);
    }
    clusters
}

fn decide_value(holders: &Holders<'_>, primary: &str, tolerance: f64) -> Option<f64> {
    let mut values: Vec<(Option<f64>, &str)> =
        holders.iter().map(|(&id, f)| (f.value, id)).collect();
    let clusters = cluster_values(&mut values, tolerance);
    let total = values.len();
    let fallback = if holders.contains_key(primary) {
        primary
    } else {
        holders.keys().next().copied().expect("at least one holder")
    };
    let winner = clusters
        .iter()
        .find(|c| 2 * c.len() > total)
        .or_else(|| clusters.iter().find(|c| c.iter().any(|&i| values[i].1 == fallback)))
        .expect("fallback voter belongs to a cluster");
    let representative = winner
        .iter()
        .map(|&i| values[i].1)
        .find(|&id| id == primary)
        .unwrap_or_else(|| winner.iter().map(|&i| values[i].1).min().expect("non-empty cluster"));
    holders[representative].value
}

/// Consensus extraction of a panel.
pub fn vote(panel: &VotePanel) -> Result<ExtractionRecord, VoteError> {
    panel.validate()?;
    let primary = panel.designated_primary.as_str();
    let k = panel.extractions.len();

    let mut by_feature: BTreeMap<&str, Holders<'_>> = BTreeMap::new();
    for (id, record) in panel.evaluator_ids.iter().zip(&panel.extractions) {
        for f in record.entries() {
            by_feature.entry(f.feature_name.as_str()).or_default().insert(id.as_str(), f);
        }
    }
    let primary_record = panel
        .evaluator_ids
        .iter()
        .position(|id| id == primary)
        .map(|i| &panel.extractions[i])
        .expect("validated primary");

    let mut consensus: Vec<(usize, usize, &str, ExtractedFeature)> = Vec::new();
    for (name, holders) in &by_feature {
        let present_votes = holders.len();
        let present = if 2 * present_votes > k {
            true
        } else if 2 * (k - present_votes) > k {
            false
        } else {
            primary_record.get(name).is_some()
        };
        if !present {
            continue;
        }
        let rank = decide(holders, primary, |a, b| a == b, |f| f.rank);
        let sign = decide(holders, primary, |a, b| a == b, |f| f.sign);
        let value = decide_value(holders, primary, panel.value_tolerance);
        let assumption_from = if holders.contains_key(primary) {
            primary
        } else {
            holders.keys().next().copied().expect("holder")
        };
        let primary_rank = primary_record.get(name).map_or(usize::MAX, |f| f.rank);
        consensus.push((
            rank,
            primary_rank,
            name,
            ExtractedFeature {
                feature_name: name.to_string(),
                rank,
                sign,
                value,
                assumption: holders[assumption_from].assumption.clone(),
            },
        ));
    }
    // Colliding consensus ranks are resolved by the primary's ordering, then by name.
    consensus.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    let entries = consensus.into_iter().map(|(_, _, _, f)| f).collect();
    let (record, _) = ExtractionRecord::repaired(entries)
        .map_err(|e| VoteError::InvalidPanel(e.to_string()))?;
    Ok(record)
}
