//! Model-free simulation of the refinement loop: templated narratives with injected
//! faults, an exact extractor for them, and reviser mocks of varying compliance.

pub mod narrative;
pub mod provider;
pub mod reviser;
pub mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, TruthEntry};

pub use narrative::{oracle_extract, render_templated_narrative, Claim, TemplatedNarrative};
pub use provider::SimProvider;
pub use reviser::{mock_reviser, Instruction, ReviserPolicy, RevisionOutcome};
pub use synth::{synth_corpus, SimCase, SimCorpus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("text is not a templated narrative: {0}")]
    NotTemplated(String),
    #[error("fault plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Faults applied to the claimed content of a templated narrative.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    #[serde(default)]
    pub rank_swaps: Vec<(usize, usize)>,
    #[serde(default)]
    pub sign_flips: Vec<String>,
    #[serde(default)]
    pub value_perturbations: Vec<(String, f64)>,
    #[serde(default)]
    pub seed: u64,
}

impl FaultPlan {
    pub fn is_identity(&self) -> bool {
        self.rank_swaps.iter().all(|(i, j)| i == j)
            && self.sign_flips.is_empty()
            && self.value_perturbations.iter().all(|(_, d)| *d == 0.0)
    }

    /// Checks the plan against the top-n ground truth it will be applied to.
    pub fn check(&self, truth: &[TruthEntry]) -> Result<(), SimError> {
        let n = truth.len();
        for &(i, j) in &self.rank_swaps {
            if i >= n || j >= n {
                return Err(SimError::InvalidPlan(format!("swap ({i}, {j}) out of range for n = {n}")));
            }
        }
        let known = |name: &str| truth.iter().any(|t| t.feature_name == name);
        for name in self
            .sign_flips
            .iter()
            .chain(self.value_perturbations.iter().map(|(n, _)| n))
        {
            if !known(name) {
                return Err(SimError::InvalidPlan(format!(
                    "feature `{name}` is not among the top {n} features"
                )));
            }
        }
        if self.value_perturbations.iter().any(|(_, d)| !d.is_finite()) {
            return Err(SimError::InvalidPlan("value perturbation is not finite".into()));
        }
        Ok(())
    }
}
