//! Harness configuration file (TOML): the run section plus provider and gateway setup.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use narrative_core::gateway::http::{Anthropic, OpenAiCompatible, ANTHROPIC_KEY_ENV, OPENAI_KEY_ENV};
use narrative_core::gateway::{
    ChatProvider, EchoProvider, Gateway, Price, PriceTable, ProviderLimits, RetryPolicy, ScriptedProvider,
};
use narrative_core::orchestrator::RunConfig;
use narrative_core::prompt::RoleTag;
use narrative_core::simlab::{ReviserPolicy, SimProvider};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Simlab,
    Echo,
    Scripted,
    Openai,
    Anthropic,
}

fn default_max_concurrent() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Model ids routed to this provider; defaults to the provider's own name.
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default)]
    pub requests_per_second: Option<u32>,
    #[serde(default)]
    pub price: Option<Price>,
    /// simlab: reviser behaviour.
    #[serde(default)]
    pub policy: Option<ReviserPolicy>,
    /// simlab: seed; defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// scripted: JSON fixture file, relative to the config file.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    /// openai / anthropic
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub remote_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySettings {
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: Vec<u64>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_attempts() -> u32 {
    3
}
fn default_backoff() -> Vec<u64> {
    vec![1000, 4000, 16000]
}
fn default_jitter() -> f64 {
    0.2
}
fn default_timeout() -> u64 {
    120
}

impl Default for GatewaySettings {
    fn default() -> Self {
        GatewaySettings {
            max_attempts: default_attempts(),
            backoff_ms: default_backoff(),
            jitter: default_jitter(),
            timeout_secs: default_timeout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub run: RunConfig,
    #[serde(default)]
    pub gateway: GatewaySettings,
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderConfig>,
    /// Directory of the config file, for resolving relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// One scripted answer sequence.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureEntry {
    role: RoleTag,
    #[serde(default = "any_key")]
    key: String,
    responses: Vec<String>,
}

fn any_key() -> String {
    narrative_core::gateway::mock::ANY_KEY.to_string()
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: HarnessConfig =
            toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Checks the run section and that every model the run needs has a provider.
    pub fn validate(&self, source: &Path) -> Result<()> {
        self.run
            .validate()
            .map_err(|e| anyhow::anyhow!("{}: [run] {e}", source.display()))?;
        let served: Vec<String> = self.providers.iter().flat_map(|(name, p)| routed(name, p)).collect();
        for model in self.run.required_models() {
            if !served.contains(&model) {
                bail!(
                    "{}: model `{model}` is needed by the run but no [providers.*] entry serves it",
                    source.display()
                );
            }
        }
        Ok(())
    }

    pub fn build_gateway(&self) -> Result<Gateway> {
        let retry = RetryPolicy {
            max_attempts: self.gateway.max_attempts,
            backoff: self.gateway.backoff_ms.iter().map(|&ms| Duration::from_millis(ms)).collect(),
            jitter: self.gateway.jitter,
        };
        let timeout = Duration::from_secs(self.gateway.timeout_secs);
        let mut prices = PriceTable::default();
        let mut builder = Gateway::builder().retry(retry).request_timeout(timeout);
        for (name, p) in &self.providers {
            let models = routed(name, p);
            if let Some(price) = p.price {
                for m in &models {
                    prices = prices.with(m.clone(), price);
                }
            }
            let provider = self.provider(name, p, timeout)?;
            let limits = ProviderLimits {
                max_concurrent: p.max_concurrent,
                requests_per_second: p.requests_per_second,
            };
            builder = builder.provider(provider, models, limits);
        }
        Ok(builder.prices(prices).build())
    }

    fn provider(&self, name: &str, p: &ProviderConfig, timeout: Duration) -> Result<Arc<dyn ChatProvider>> {
        let field = |f: &str| format!("[providers.{name}] {f}");
        Ok(match p.kind {
            ProviderKind::Simlab => Arc::new(SimProvider::new(
                name,
                p.policy.unwrap_or(ReviserPolicy::Compliant),
                p.seed.unwrap_or(self.run.seed),
            )),
            ProviderKind::Echo => Arc::new(EchoProvider::new(name)),
            ProviderKind::Scripted => {
                let rel = p.fixtures.as_ref().with_context(|| format!("{}: required for scripted providers", field("fixtures")))?;
                let path = self.base_dir.join(rel);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let entries: Vec<FixtureEntry> =
                    serde_json::from_str(&text).with_context(|| format!("{}: malformed fixture file", path.display()))?;
                let mut b = ScriptedProvider::builder(name);
                for e in entries {
                    b = b.sequence(e.role, e.key, e.responses).with_context(|| path.display().to_string())?;
                }
                Arc::new(b.build())
            }
            ProviderKind::Openai => {
                let remote = p.remote_model.clone().with_context(|| field("remote_model is required"))?;
                Arc::new(OpenAiCompatible::from_env(
                    name,
                    p.base_url.as_deref().unwrap_or("https://api.openai.com/v1"),
                    p.api_key_env.as_deref().unwrap_or(OPENAI_KEY_ENV),
                    remote,
                    timeout,
                )?)
            }
            ProviderKind::Anthropic => {
                let remote = p.remote_model.clone().with_context(|| field("remote_model is required"))?;
                Arc::new(Anthropic::from_env(
                    name,
                    p.base_url.as_deref().unwrap_or("https://api.anthropic.com"),
                    p.api_key_env.as_deref().unwrap_or(ANTHROPIC_KEY_ENV),
                    remote,
                    timeout,
                )?)
            }
        })
    }
}

fn routed(name: &str, p: &ProviderConfig) -> Vec<String> {
    if p.models.is_empty() {
        vec![name.to_string()]
    } else {
        p.models.clone()
    }
}
