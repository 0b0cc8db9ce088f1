use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Design;
use crate::coherence::CoherenceFeedback;
use crate::critic::CriticFeedback;
use crate::evaluator::{ExtractionRecord, ExtractionWarning, FaithfulnessReport};
use crate::gateway::Usage;
use crate::model::NarrativeOrigin;

/// One evaluator's view of a narrative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberExtraction {
    pub evaluator_id: String,
    pub raw_answers: Vec<String>,
    pub extraction: ExtractionRecord,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ExtractionWarning>,
}

/// An agent call that failed without ending the instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentFailure {
    pub agent: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: usize,
    pub narrative: String,
    pub origin: NarrativeOrigin,
    pub extractions: Vec<MemberExtraction>,
    /// Voted extraction when an evaluator panel is used.
    pub consensus: Option<ExtractionRecord>,
    /// Absent when evaluation failed this round.
    pub report: Option<FaithfulnessReport>,
    pub evaluator_feedback: Option<String>,
    pub critic: Option<CriticFeedback>,
    pub coherence: Option<CoherenceFeedback>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<AgentFailure>,
    pub stop_flag: bool,
    pub usage: Usage,
}

impl RoundRecord {
    pub fn is_faithful(&self) -> bool {
        self.report.as_ref().is_some_and(FaithfulnessReport::is_faithful)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProblemCategory {
    C1,
    C2,
    C3,
    C4,
    C5,
    #[serde(rename = "none")]
    NoProblem,
}

impl ProblemCategory {
    pub const ALL: [ProblemCategory; 6] = [
        ProblemCategory::C1,
        ProblemCategory::C2,
        ProblemCategory::C3,
        ProblemCategory::C4,
        ProblemCategory::C5,
        ProblemCategory::NoProblem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemCategory::C1 => "C1",
            ProblemCategory::C2 => "C2",
            ProblemCategory::C3 => "C3",
            ProblemCategory::C4 => "C4",
            ProblemCategory::C5 => "C5",
            ProblemCategory::NoProblem => "none",
        }
    }
}

impl fmt::Display for ProblemCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        ProblemCategory::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| format!("unknown category `{s}` (expected C1..C5 or none)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub round_index: usize,
    pub category: ProblemCategory,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub run_id: String,
    pub instance_id: String,
    pub dataset_id: String,
    pub design: Design,
    pub rounds: Vec<RoundRecord>,
    /// Latest manual annotation.
    pub annotation: Option<Annotation>,
    /// Every annotation ever stored, oldest first.
    #[serde(default)]
    pub annotation_history: Vec<Annotation>,
}

impl Transcript {
    pub fn final_round(&self) -> Option<&RoundRecord> {
        self.rounds.last()
    }

    /// Latest report at or before `round`, carrying early-stopped results forward.
    pub fn report_at(&self, round: usize) -> Option<&FaithfulnessReport> {
        self.rounds
            .iter()
            .take_while(|r| r.round_index <= round)
            .filter_map(|r| r.report.as_ref())
            .last()
    }

    pub fn annotate(&mut self, annotation: Annotation) {
        self.annotation_history.push(annotation.clone());
        self.annotation = Some(annotation);
    }

    /// Structural checks: contiguous rounds from 0, at most `max_rounds`, stop flag only last.
    pub fn check(&self, max_rounds: usize) -> Result<(), String> {
        if self.rounds.is_empty() {
            return Err("transcript has no rounds".into());
        }
        if self.rounds.len() > max_rounds {
            return Err(format!("{} rounds exceed the maximum of {max_rounds}", self.rounds.len()));
        }
        for (i, r) in self.rounds.iter().enumerate() {
            if r.round_index != i {
                return Err(format!("round {i} is labelled {}", r.round_index));
            }
            let last = i + 1 == self.rounds.len();
            if r.stop_flag != last {
                return Err(format!("stop flag {} on round {i}", r.stop_flag));
            }
        }
        Ok(())
    }
}
