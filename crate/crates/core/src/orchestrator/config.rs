use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunError;
use crate::critic::CriticVariant;
use crate::evaluator::DEFAULT_VALUE_TOLERANCE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Basic,
    Critic,
    CriticRule,
    Coherent,
    CoherentRule,
}

impl Design {
    pub const ALL: [Design; 5] = [
        Design::Basic,
        Design::Critic,
        Design::CriticRule,
        Design::Coherent,
        Design::CoherentRule,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Design::Basic => "basic",
            Design::Critic => "critic",
            Design::CriticRule => "critic_rule",
            Design::Coherent => "coherent",
            Design::CoherentRule => "coherent_rule",
        }
    }

    pub fn critic(self) -> Option<CriticVariant> {
        match self {
            Design::Basic => None,
            Design::Critic | Design::Coherent => Some(CriticVariant::LlmSummarized),
            Design::CriticRule | Design::CoherentRule => Some(CriticVariant::Rule),
        }
    }

    pub fn has_coherence(self) -> bool {
        matches!(self, Design::Coherent | Design::CoherentRule)
    }

    /// Agents taking part, narrator and evaluator always first.
    pub fn roster(self) -> Vec<&'static str> {
        let mut r = vec!["narrator", "faithful_evaluator"];
        match self.critic() {
            Some(CriticVariant::LlmSummarized) => r.push("faithful_critic"),
            Some(CriticVariant::Rule) => r.push("faithful_critic_rule"),
            None => {}
        }
        if self.has_coherence() {
            r.push("coherence_agent");
        }
        r
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Design {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_lowercase().replace(['-', ' '], "_");
        Design::ALL
            .into_iter()
            .find(|d| d.as_str() == norm)
            .ok_or_else(|| format!("unknown design `{s}` (expected one of basic, critic, critic_rule, coherent, coherent_rule)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    #[default]
    FromFile,
    NarratorGenerated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBindings {
    pub narrator: String,
    pub evaluator: String,
    #[serde(default)]
    pub critic: Option<String>,
    #[serde(default)]
    pub coherence: Option<String>,
}

impl ModelBindings {
    /// Every role served by one model.
    pub fn uniform(model_id: impl Into<String>) -> Self {
        let m = model_id.into();
        ModelBindings {
            narrator: m.clone(),
            evaluator: m.clone(),
            critic: Some(m.clone()),
            coherence: Some(m),
        }
    }

    pub fn critic_model(&self) -> &str {
        self.critic.as_deref().unwrap_or(&self.narrator)
    }

    pub fn coherence_model(&self) -> &str {
        self.coherence.as_deref().unwrap_or(&self.narrator)
    }

    pub fn set(&mut self, role: &str, model_id: &str) -> Result<(), String> {
        match role {
            "narrator" => self.narrator = model_id.into(),
            "evaluator" => self.evaluator = model_id.into(),
            "critic" => self.critic = Some(model_id.into()),
            "coherence" => self.coherence = Some(model_id.into()),
            other => return Err(format!("unknown role `{other}` (expected narrator, evaluator, critic or coherence)")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Evaluator model ids on the panel.
    #[serde(default)]
    pub panel: Vec<String>,
    /// Panel member whose choice breaks ties; defaults to the first member.
    #[serde(default)]
    pub primary: Option<String>,
}

impl EnsembleConfig {
    pub fn primary(&self) -> Option<&str> {
        self.primary.as_deref().or(self.panel.first().map(String::as_str))
    }
}

fn default_max_rounds() -> usize {
    3
}
fn default_n_features() -> usize {
    4
}
fn default_max_sentences() -> usize {
    10
}
fn default_tolerance() -> f64 {
    DEFAULT_VALUE_TOLERANCE
}
fn default_concurrency() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub design: Design,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_n_features")]
    pub n_features: usize,
    #[serde(default = "default_max_sentences")]
    pub max_sentences: usize,
    #[serde(default)]
    pub baseline_mode: BaselineMode,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    pub models: ModelBindings,
    #[serde(default = "default_tolerance")]
    pub value_tolerance: f64,
    #[serde(default)]
    pub seed: u64,
    /// Instances processed at the same time.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub run_id: Option<String>,
}

impl RunConfig {
    pub fn new(design: Design, models: ModelBindings) -> Self {
        RunConfig {
            design,
            max_rounds: default_max_rounds(),
            n_features: default_n_features(),
            max_sentences: default_max_sentences(),
            baseline_mode: BaselineMode::FromFile,
            ensemble: EnsembleConfig::default(),
            models,
            value_tolerance: default_tolerance(),
            seed: 0,
            concurrency: default_concurrency(),
            run_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |field: &str, msg: String| Err(RunError::Config { field: field.into(), message: msg });
        if self.max_rounds == 0 {
            return bad("max_rounds", "must be at least 1".into());
        }
        if self.n_features == 0 {
            return bad("n_features", "must be at least 1".into());
        }
        if self.max_sentences < 3 {
            return bad("max_sentences", "must be at least 3".into());
        }
        if !(self.value_tolerance >= 0.0 && self.value_tolerance.is_finite()) {
            return bad("value_tolerance", format!("must be a finite non-negative number, got {}", self.value_tolerance));
        }
        if self.concurrency == 0 {
            return bad("concurrency", "must be at least 1".into());
        }
        if self.ensemble.enabled {
            if self.ensemble.panel.len() < 2 {
                return bad("ensemble.panel", format!("needs at least 2 evaluators, got {}", self.ensemble.panel.len()));
            }
            let mut ids = self.ensemble.panel.clone();
            ids.sort();
            ids.dedup();
            if ids.len() != self.ensemble.panel.len() {
                return bad("ensemble.panel", "evaluator ids must be unique".into());
            }
            if let Some(p) = &self.ensemble.primary {
                if !self.ensemble.panel.contains(p) {
                    return bad("ensemble.primary", format!("`{p}` is not on the panel"));
                }
            }
        }
        for (field, id) in [("models.narrator", &self.models.narrator), ("models.evaluator", &self.models.evaluator)] {
            if id.trim().is_empty() {
                return bad(field, "model id is empty".into());
            }
        }
        Ok(())
    }

    /// Evaluator models in use: the panel when ensembling, else the single evaluator.
    pub fn evaluator_models(&self) -> Vec<String> {
        if self.ensemble.enabled {
            self.ensemble.panel.clone()
        } else {
            vec![self.models.evaluator.clone()]
        }
    }

    /// All model ids the run may call.
    pub fn required_models(&self) -> Vec<String> {
        let mut out = vec![self.models.narrator.clone()];
        out.extend(self.evaluator_models());
        if self.design.critic() == Some(CriticVariant::LlmSummarized) {
            out.push(self.models.critic_model().to_string());
        }
        if self.design.has_coherence() {
            out.push(self.models.coherence_model().to_string());
        }
        out.sort();
        out.dedup();
        out
    }

    /// The configured run id, or a short hash of the configuration.
    pub fn effective_run_id(&self) -> String {
        if let Some(id) = &self.run_id {
            return id.clone();
        }
        let snapshot = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&snapshot);
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        format!("{}-{hex}", self.design)
    }
}
