//! HTTPS chat adapters for live providers.
//!
//! Credentials come from environment variables; the variable name is part of the
//! provider configuration (`OPENAI_API_KEY` and `ANTHROPIC_API_KEY` by default).

use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::{ChatProvider, ChatRequest, ProviderError, ProviderReply};

pub const OPENAI_KEY_ENV: &str = "OPENAI_API_KEY";
pub const ANTHROPIC_KEY_ENV: &str = "ANTHROPIC_API_KEY";
pub const ANTHROPIC_VERSION: &str = "2023-06-01";

fn read_key(env_var: &str) -> Result<String, ProviderError> {
    match std::env::var(env_var) {
        Ok(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(ProviderError::Auth(format!("environment variable {env_var} is not set"))),
    }
}

fn client(timeout: Duration) -> Result<reqwest::Client, ProviderError> {
    reqwest::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ProviderError::Fatal(e.to_string()))
}

fn classify_status(status: reqwest::StatusCode, body: &str) -> ProviderError {
    let msg = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    match status.as_u16() {
        401 | 403 => ProviderError::Auth(msg),
        408 => ProviderError::Timeout(msg),
        429 => ProviderError::RateLimited(msg),
        500..=599 => ProviderError::Transient(msg),
        _ => ProviderError::Fatal(msg),
    }
}

fn classify_transport(err: reqwest::Error) -> ProviderError {
    if err.is_timeout() {
        ProviderError::Timeout(err.to_string())
    } else if err.is_connect() || err.is_request() {
        ProviderError::Transient(err.to_string())
    } else {
        ProviderError::Fatal(err.to_string())
    }
}

async fn post_json(
    request: reqwest::RequestBuilder,
    payload: serde_json::Value,
) -> Result<String, ProviderError> {
    let response = request.json(&payload).send().await.map_err(classify_transport)?;
    let status = response.status();
    let text = response.text().await.map_err(classify_transport)?;
    if !status.is_success() {
        return Err(classify_status(status, &text));
    }
    Ok(text)
}

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct OpenAiCompatible {
    id: String,
    base_url: String,
    api_key: String,
    remote_model: String,
    http: reqwest::Client,
}

impl OpenAiCompatible {
    pub fn new(
        id: impl Into<String>,
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        remote_model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        Ok(OpenAiCompatible {
            id: id.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            remote_model: remote_model.into(),
            http: client(timeout)?,
        })
    }

    pub fn from_env(
        id: impl Into<String>,
        base_url: impl Into<String>,
        env_var: &str,
        remote_model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        Self::new(id, base_url, read_key(env_var)?, remote_model, timeout)
    }

    pub fn payload(&self, request: &ChatRequest) -> serde_json::Value {
        json!({
            "model": self.remote_model,
            "messages": [{"role": "user", "content": request.body}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }
}

#[derive(Deserialize)]
struct OpenAiResponse {
    choices: Vec<OpenAiChoice>,
    usage: Option<OpenAiUsage>,
}

#[derive(Deserialize)]
struct OpenAiChoice {
    message: OpenAiMessage,
}

#[derive(Deserialize)]
struct OpenAiMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct OpenAiUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

pub fn parse_openai(text: &str) -> Result<ProviderReply, ProviderError> {
    let parsed: OpenAiResponse =
        serde_json::from_str(text).map_err(|e| ProviderError::Fatal(format!("malformed response: {e}")))?;
    let body = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| ProviderError::Fatal("response has no message content".into()))?;
    Ok(ProviderReply {
        body,
        input_tokens: parsed.usage.as_ref().map(|u| u.prompt_tokens),
        output_tokens: parsed.usage.as_ref().map(|u| u.completion_tokens),
    })
}

#[async_trait]
impl ChatProvider for OpenAiCompatible {
    fn provider_id(&self) -> &str {
        &self.id
    }

    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let builder = self
            .http
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key);
        let text = post_json(builder, self.payload(request)).await?;
        parse_openai(&text)
    }
}

/// Anthropic `/v1/messages` endpoint.
pub struct Anthropic {
    id: String,
    base_url: String,
    api_key: String,
    remote_model: String,
    http: reqwest::Client,
}

impl Anthropic {
    pub fn new(
        id: impl Into<String>,
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        remote_model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        Ok(Anthropic {
            id: id.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            remote_model: remote_model.into(),
            http: client(timeout)?,
        })
    }

    pub fn from_env(
        id: impl Into<String>,
        base_url: impl Into<String>,
        env_var: &str,
        remote_model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        Self::new(id, base_url, read_key(env_var)?, remote_model, timeout)
    }

    pub fn payload(&self, request: &ChatRequest) -> serde_json::Value {
        json!({
            "model": self.remote_model,
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.body}],
        })
    }
}

#[derive(Deserialize)]
struct AnthropicResponse {
    content: Vec<AnthropicBlock>,
    usage: Option<AnthropicUsage>,
}

#[derive(Deserialize)]
struct AnthropicBlock {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    text: String,
}

#[derive(Deserialize)]
struct AnthropicUsage {
    input_tokens: u64,
    output_tokens: u64,
}

pub fn parse_anthropic(text: &str) -> Result<ProviderReply, ProviderError> {
    let parsed: AnthropicResponse =
        serde_json::from_str(text).map_err(|e| ProviderError::Fatal(format!("malformed response: {e}")))?;
    let body: String = parsed
        .content
        .iter()
        .filter(|b| b.kind == "text")
        .map(|b| b.text.as_str())
        .collect();
    Ok(ProviderReply {
        body,
        input_tokens: parsed.usage.as_ref().map(|u| u.input_tokens),
        output_tokens: parsed.usage.as_ref().map(|u| u.output_tokens),
    })
}

#[async_trait]
impl ChatProvider for Anthropic {
    fn provider_id(&self) -> &str {
        &self.id
    }

    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let builder = self
            .http
            .post(format!("{}/v1/messages", self.base_url))
            .header("x-api-key", &self.api_key)
            .header("anthropic-version", ANTHROPIC_VERSION);
        let text = post_json(builder, self.payload(request)).await?;
        parse_anthropic(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_openai_body() {
        let r = parse_openai(
            r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"prompt_tokens":5,"completion_tokens":1}}"#,
        )
        .unwrap();
        assert_eq!(r.body, "hi");
        assert_eq!((r.input_tokens, r.output_tokens), (Some(5), Some(1)));
        assert!(matches!(parse_openai(r#"{"choices":[]}"#), Err(ProviderError::Fatal(_))));
    }

    #[test]
    fn parses_anthropic_body() {
        let r = parse_anthropic(
            r#"{"content":[{"type":"text","text":"a"},{"type":"thinking"},{"type":"text","text":"b"}],"usage":{"input_tokens":3,"output_tokens":2}}"#,
        )
        .unwrap();
        assert_eq!(r.body, "ab");
        assert_eq!(r.output_tokens, Some(2));
    }

    #[test]
    fn status_classes() {
        use reqwest::StatusCode;
        assert!(matches!(classify_status(StatusCode::UNAUTHORIZED, ""), ProviderError::Auth(_)));
        assert!(matches!(classify_status(StatusCode::TOO_MANY_REQUESTS, ""), ProviderError::RateLimited(_)));
        assert!(matches!(classify_status(StatusCode::BAD_GATEWAY, ""), ProviderError::Transient(_)));
        assert!(matches!(classify_status(StatusCode::BAD_REQUEST, ""), ProviderError::Fatal(_)));
    }

    #[test]
    fn missing_key_is_auth_error() {
        let err = OpenAiCompatible::from_env(
            "o",
            "http://localhost",
            "NARRATIVE_TEST_SURELY_UNSET_KEY",
            "m",
            Duration::from_secs(1),
        )
        .err()
        .unwrap();
        assert!(matches!(err, ProviderError::Auth(_)));
    }
}
