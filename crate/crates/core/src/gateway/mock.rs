//! Deterministic providers for tests and desk-scale runs.

use std::collections::HashMap;
use std::sync::Mutex;

use async_trait::async_trait;
use thiserror::Error;

use super::{ChatProvider, ChatRequest, ProviderError, ProviderReply};
use crate::prompt::RoleTag;

/// Returns the request body unchanged.
#[derive(Debug, Clone)]
pub struct EchoProvider {
    id: String,
}

impl EchoProvider {
    pub fn new(id: impl Into<String>) -> Self {
        EchoProvider { id: id.into() }
    }
}

#[async_trait]
impl ChatProvider for EchoProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        Ok(ProviderReply::text(request.body.clone()))
    }
}

/// Key that matches any instance id.
pub const ANY_KEY: &str = "*";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("fixture for role {role} and key `{key}` registered twice")]
pub struct DuplicateFixture {
    pub role: RoleTag,
    pub key: String,
}

/// Replays fixture sequences keyed by (role, instance id).
///
/// Each call for a key returns the next entry of its sequence; once the sequence is
/// exhausted the final entry repeats. A key of [`ANY_KEY`] serves instances that
/// have no dedicated fixture.
#[derive(Debug)]
pub struct ScriptedProvider {
    id: String,
    fixtures: HashMap<(RoleTag, String), Vec<String>>,
    cursors: Mutex<HashMap<(RoleTag, String), usize>>,
}

#[derive(Debug, Default)]
pub struct ScriptedProviderBuilder {
    id: String,
    fixtures: HashMap<(RoleTag, String), Vec<String>>,
}

impl ScriptedProviderBuilder {
    pub fn fixture(
        self,
        role: RoleTag,
        key: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<Self, DuplicateFixture> {
        self.sequence(role, key, [text])
    }

    pub fn sequence<I, S>(
        mut self,
        role: RoleTag,
        key: impl Into<String>,
        texts: I,
    ) -> Result<Self, DuplicateFixture>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let key = key.into();
        let texts: Vec<String> = texts.into_iter().map(Into::into).collect();
        if texts.is_empty() {
            return Ok(self);
        }
        if self.fixtures.contains_key(&(role, key.clone())) {
            return Err(DuplicateFixture { role, key });
        }
        self.fixtures.insert((role, key), texts);
        Ok(self)
    }

    pub fn build(self) -> ScriptedProvider {
        ScriptedProvider {
            id: self.id,
            fixtures: self.fixtures,
            cursors: Mutex::new(HashMap::new()),
        }
    }
}

impl ScriptedProvider {
    pub fn builder(id: impl Into<String>) -> ScriptedProviderBuilder {
        ScriptedProviderBuilder {
            id: id.into(),
            fixtures: HashMap::new(),
        }
    }

    /// Builds a provider from a flat fixture map, one response per key.
    pub fn from_fixtures<I, K, T>(id: impl Into<String>, fixtures: I) -> Result<Self, DuplicateFixture>
    where
        I: IntoIterator<Item = ((RoleTag, K), T)>,
        K: Into<String>,
        T: Into<String>,
    {
        let mut builder = ScriptedProvider::builder(id);
        for ((role, key), text) in fixtures {
            builder = builder.fixture(role, key, text)?;
        }
        Ok(builder.build())
    }

    fn next_for(&self, role: RoleTag, instance: &str) -> Result<String, ProviderError> {
        let key = [instance, ANY_KEY]
            .into_iter()
            .map(|k| (role, k.to_string()))
            .find(|k| self.fixtures.contains_key(k))
            .ok_or_else(|| ProviderError::FixtureMissing {
                role,
                key: instance.to_string(),
            })?;
        let seq = &self.fixtures[&key];
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let cursor = cursors.entry(key).or_insert(0);
        let text = seq[(*cursor).min(seq.len() - 1)].clone();
        *cursor += 1;
        Ok(text)
    }
}

#[async_trait]
impl ChatProvider for ScriptedProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        self.next_for(request.role_tag, &request.context.instance_id)
            .map(ProviderReply::text)
    }
}

/// Adapts a closure into a provider.
pub struct FnProvider<F> {
    id: String,
    f: F,
}

impl<F> FnProvider<F>
where
    F: Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        FnProvider { id: id.into(), f }
    }
}

#[async_trait]
impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn provider_id(&self) -> &str {
        &self.id
    }

    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        (self.f)(request).map(ProviderReply::text)
    }
}
