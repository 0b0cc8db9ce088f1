//! Provider-agnostic chat completion with retry, concurrency caps, rate limiting
//! and a usage/cost ledger.

pub mod http;
pub mod ledger;
pub mod mock;

use std::collections::HashMap;
use std::num::NonZeroU32;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use governor::{DefaultDirectRateLimiter, Quota, RateLimiter};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::prompt::{PromptText, RoleTag};

pub use ledger::{Price, PriceTable, Usage, UsageKey, UsageLedger};
pub use mock::{EchoProvider, ScriptedProvider, ScriptedProviderBuilder};

/// Who is asking: used for ledger attribution and fixture routing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestContext {
    pub run_id: String,
    pub instance_id: String,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role_tag: RoleTag,
    pub body: String,
    pub temperature: f64,
    pub model_id: String,
    pub max_output_tokens: u32,
    pub context: RequestContext,
}

impl ChatRequest {
    pub fn new(prompt: &PromptText, model_id: impl Into<String>, context: RequestContext) -> Self {
        ChatRequest {
            role_tag: prompt.role_tag,
            body: prompt.body.clone(),
            temperature: 0.0,
            model_id: model_id.into(),
            max_output_tokens: 2048,
            context,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub body: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub provider_id: String,
}

/// Raw provider answer before the gateway fills in accounting fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub body: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

impl ProviderReply {
    pub fn text(body: impl Into<String>) -> Self {
        ProviderReply {
            body: body.into(),
            input_tokens: None,
            output_tokens: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("transient transport error: {0}")]
    Transient(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("provider error: {0}")]
    Fatal(String),
    #[error("no fixture for role {role} and key `{key}`")]
    FixtureMissing { role: RoleTag, key: String },
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::RateLimited(_) | ProviderError::Transient(_) | ProviderError::Timeout(_)
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts: {message}")]
    RateLimited { attempts: u32, message: String },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("timed out after {attempts} attempts: {message}")]
    Timeout { attempts: u32, message: String },
    #[error("no fixture for role {role} and key `{key}`")]
    FixtureMissing { role: RoleTag, key: String },
    #[error("no provider configured for model `{0}`")]
    UnknownModel(String),
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError>;
}

/// Rough token count for providers that do not report usage.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before attempt k+1 is `backoff[k-1]` (last entry repeats).
    pub backoff: Vec<Duration>,
    /// Relative jitter, e.g. 0.2 for ±20%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff: vec![
                Duration::from_secs(1),
                Duration::from_secs(4),
                Duration::from_secs(16),
            ],
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            backoff: vec![Duration::ZERO],
            jitter: 0.0,
        }
    }

    fn delay_after(&self, attempt: u32) -> Duration {
        let base = self
            .backoff
            .get(attempt as usize - 1)
            .or(self.backoff.last())
            .copied()
            .unwrap_or_default();
        if self.jitter <= 0.0 || base.is_zero() {
            return base;
        }
        let factor = rand::thread_rng().gen_range(1.0 - self.jitter..=1.0 + self.jitter);
        base.mul_f64(factor.max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProviderLimits {
    pub max_concurrent: usize,
    /// Requests per second; `None` disables the token bucket.
    pub requests_per_second: Option<u32>,
}

impl Default for ProviderLimits {
    fn default() -> Self {
        ProviderLimits {
            max_concurrent: 4,
            requests_per_second: None,
        }
    }
}

struct ProviderSlot {
    provider: Arc<dyn ChatProvider>,
    permits: Semaphore,
    limiter: Option<DefaultDirectRateLimiter>,
}

pub struct Gateway {
    slots: Vec<ProviderSlot>,
    routes: HashMap<String, usize>,
    ledger: UsageLedger,
    retry: RetryPolicy,
    request_timeout: Duration,
}

#[derive(Default)]
pub struct GatewayBuilder {
    slots: Vec<ProviderSlot>,
    routes: HashMap<String, usize>,
    prices: PriceTable,
    retry: Option<RetryPolicy>,
    request_timeout: Option<Duration>,
}

impl GatewayBuilder {
    /// Registers a provider serving the given model ids.
    pub fn provider<I, S>(mut self, provider: Arc<dyn ChatProvider>, models: I, limits: ProviderLimits) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let idx = self.slots.len();
        let limiter = limits
            .requests_per_second
            .and_then(NonZeroU32::new)
            .map(|rps| RateLimiter::direct(Quota::per_second(rps)));
        self.slots.push(ProviderSlot {
            provider,
            permits: Semaphore::new(limits.max_concurrent.max(1)),
            limiter,
        });
        for model in models {
            self.routes.insert(model.into(), idx);
        }
        self
    }

    pub fn prices(mut self, prices: PriceTable) -> Self {
        self.prices = prices;
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = Some(retry);
        self
    }

    pub fn request_timeout(mut self, timeout: Duration) -> Self {
        self.request_timeout = Some(timeout);
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            slots: self.slots,
            routes: self.routes,
            ledger: UsageLedger::new(self.prices),
            retry: self.retry.unwrap_or_default(),
            request_timeout: self.request_timeout.unwrap_or(Duration::from_secs(120)),
        }
    }
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder::default()
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn serves(&self, model_id: &str) -> bool {
        self.routes.contains_key(model_id)
    }

    pub async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let slot = self
            .routes
            .get(&request.model_id)
            .map(|&i| &self.slots[i])
            .ok_or_else(|| GatewayError::UnknownModel(request.model_id.clone()))?;
        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let outcome = {
                let _permit = slot.permits.acquire().await.expect("semaphore never closed");
                if let Some(limiter) = &slot.limiter {
                    limiter.until_ready().await;
                }
                match tokio::time::timeout(self.request_timeout, slot.provider.send(request)).await {
                    Ok(result) => result,
                    Err(_) => Err(ProviderError::Timeout(format!(
                        "no answer within {:?}",
                        self.request_timeout
                    ))),
                }
            };
            match outcome {
                Ok(reply) => {
                    if reply.body.trim().is_empty() {
                        return Err(GatewayError::Provider(format!(
                            "{} returned an empty body",
                            slot.provider.provider_id()
                        )));
                    }
                    let response = ChatResponse {
                        input_tokens: reply.input_tokens.unwrap_or_else(|| estimate_tokens(&request.body)),
                        output_tokens: reply.output_tokens.unwrap_or_else(|| estimate_tokens(&reply.body)),
                        body: reply.body,
                        latency_ms: started.elapsed().as_millis() as u64,
                        provider_id: slot.provider.provider_id().to_string(),
                    };
                    self.ledger.record(request, &response);
                    return Ok(response);
                }
                Err(err) if err.is_retryable() && attempt < max_attempts => {
                    tracing::warn!(attempt, model = %request.model_id, error = %err, "retrying request");
                    tokio::time::sleep(self.retry.delay_after(attempt)).await;
                }
                Err(err) => return Err(into_gateway_error(err, attempt)),
            }
        }
    }
}

fn into_gateway_error(err: ProviderError, attempts: u32) -> GatewayError {
    match err {
        ProviderError::Auth(m) => GatewayError::Auth(m),
        ProviderError::RateLimited(message) => GatewayError::RateLimited { attempts, message },
        ProviderError::Timeout(message) => GatewayError::Timeout { attempts, message },
        ProviderError::Transient(m) | ProviderError::Fatal(m) => GatewayError::Provider(m),
        ProviderError::FixtureMissing { role, key } => GatewayError::FixtureMissing { role, key },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

    struct Flaky {
        failures: AtomicU32,
        error: ProviderError,
        calls: AtomicU32,
    }

    #[async_trait]
    impl ChatProvider for Flaky {
        fn provider_id(&self) -> &str {
            "flaky"
        }
        async fn send(&self, _request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(self.error.clone());
            }
            Ok(ProviderReply::text("ok"))
        }
    }

    fn request(model: &str) -> ChatRequest {
        ChatRequest {
            role_tag: RoleTag::Evaluator,
            body: "hello there".into(),
            temperature: 0.0,
            model_id: model.into(),
            max_output_tokens: 16,
            context: RequestContext::default(),
        }
    }

    fn flaky(failures: u32, error: ProviderError) -> Arc<Flaky> {
        Arc::new(Flaky {
            failures: AtomicU32::new(failures),
            error,
            calls: AtomicU32::new(0),
        })
    }

    #[tokio::test]
    async fn echo_round_trip_costs_nothing() {
        let gw = Gateway::builder()
            .provider(Arc::new(EchoProvider::new("echo")), ["echo"], ProviderLimits::default())
            .build();
        let mut req = request("echo");
        req.body = "X".into();
        let resp = gw.complete(&req).await.unwrap();
        assert_eq!(resp.body, "X");
        assert_eq!(resp.provider_id, "echo");
        assert_eq!(gw.ledger().total_cost(), 0.0);
        assert_eq!(gw.ledger().total_usage().requests, 1);
    }

    #[tokio::test]
    async fn retries_transient_errors() {
        let p = flaky(2, ProviderError::Transient("reset".into()));
        let gw = Gateway::builder()
            .provider(p.clone(), ["m"], ProviderLimits::default())
            .retry(RetryPolicy::immediate(3))
            .build();
        assert_eq!(gw.complete(&request("m")).await.unwrap().body, "ok");
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn rate_limit_exhausts_retries() {
        let p = flaky(10, ProviderError::RateLimited("429".into()));
        let gw = Gateway::builder()
            .provider(p.clone(), ["m"], ProviderLimits::default())
            .retry(RetryPolicy::immediate(3))
            .build();
        let err = gw.complete(&request("m")).await.unwrap_err();
        assert!(matches!(err, GatewayError::RateLimited { attempts: 3, .. }));
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn auth_errors_are_not_retried() {
        let p = flaky(10, ProviderError::Auth("bad key".into()));
        let gw = Gateway::builder()
            .provider(p.clone(), ["m"], ProviderLimits::default())
            .retry(RetryPolicy::immediate(3))
            .build();
        assert!(matches!(gw.complete(&request("m")).await, Err(GatewayError::Auth(_))));
        assert_eq!(p.calls.load(Ordering::SeqCst), 1);
    }

    #[tokio::test]
    async fn unknown_model() {
        let gw = Gateway::builder().build();
        assert_eq!(
            gw.complete(&request("nope")).await.unwrap_err(),
            GatewayError::UnknownModel("nope".into())
        );
    }

    struct Slow {
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    #[async_trait]
    impl ChatProvider for Slow {
        fn provider_id(&self) -> &str {
            "slow"
        }
        async fn send(&self, _request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            tokio::time::sleep(Duration::from_millis(20)).await;
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            Ok(ProviderReply::text("done"))
        }
    }

    #[tokio::test]
    async fn concurrency_cap_is_enforced() {
        let slow = Arc::new(Slow {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw = Arc::new(
            Gateway::builder()
                .provider(
                    slow.clone(),
                    ["s"],
                    ProviderLimits {
                        max_concurrent: 2,
                        requests_per_second: None,
                    },
                )
                .build(),
        );
        let calls = (0..8).map(|_| {
            let gw = gw.clone();
            tokio::spawn(async move { gw.complete(&request("s")).await })
        });
        for r in futures::future::join_all(calls).await {
            r.unwrap().unwrap();
        }
        assert_eq!(slow.peak.load(Ordering::SeqCst), 2);
        assert_eq!(gw.ledger().total_usage().requests, 8);
    }

    #[tokio::test]
    async fn timeout_is_reported() {
        let slow = Arc::new(Slow {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw = Gateway::builder()
            .provider(slow, ["s"], ProviderLimits::default())
            .retry(RetryPolicy::immediate(2))
            .request_timeout(Duration::from_millis(1))
            .build();
        assert!(matches!(
            gw.complete(&request("s")).await,
            Err(GatewayError::Timeout { attempts: 2, .. })
        ));
    }

    #[test]
    fn backoff_schedule() {
        let mut p = RetryPolicy { jitter: 0.0, ..RetryPolicy::default() };
        assert_eq!(p.delay_after(1), Duration::from_secs(1));
        assert_eq!(p.delay_after(2), Duration::from_secs(4));
        assert_eq!(p.delay_after(3), Duration::from_secs(16));
        assert_eq!(p.delay_after(7), Duration::from_secs(16));
        p.jitter = 0.2;
        let d = p.delay_after(2);
        assert!(d >= Duration::from_secs_f64(3.2) && d <= Duration::from_secs_f64(4.8));
    }
}
