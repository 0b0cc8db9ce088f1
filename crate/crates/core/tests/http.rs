use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use narrative_core::gateway::http::{Anthropic, OpenAiCompatible, ANTHROPIC_VERSION};
use narrative_core::gateway::{
    ChatProvider, ChatRequest, Gateway, GatewayError, ProviderError, ProviderLimits, RequestContext, RetryPolicy,
};
use narrative_core::prompt::{PromptText, RoleTag};
use serde_json::{json, Value};

#[derive(Default)]
struct Seen {
    headers: Mutex<Vec<HeaderMap>>,
    bodies: Mutex<Vec<Value>>,
    hits: AtomicUsize,
    /// Statuses to return before succeeding.
    failures: Mutex<Vec<u16>>,
}

impl Seen {
    fn next_failure(&self) -> Option<StatusCode> {
        let mut f = self.failures.lock().unwrap();
        if f.is_empty() {
            None
        } else {
            Some(StatusCode::from_u16(f.remove(0)).unwrap())
        }
    }
}

async fn openai(State(s): State<Arc<Seen>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    s.hits.fetch_add(1, Ordering::SeqCst);
    s.headers.lock().unwrap().push(headers);
    s.bodies.lock().unwrap().push(body);
    if let Some(code) = s.next_failure() {
        return (code, Json(json!({"error": "nope"})));
    }
    (
        StatusCode::OK,
        Json(json!({
            "choices": [{"message": {"role": "assistant", "content": "narrative text"}}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 3}
        })),
    )
}

async fn anthropic(State(s): State<Arc<Seen>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    s.hits.fetch_add(1, Ordering::SeqCst);
    s.headers.lock().unwrap().push(headers);
    s.bodies.lock().unwrap().push(body);
    if let Some(code) = s.next_failure() {
        return (code, Json(json!({"error": "nope"})));
    }
    (
        StatusCode::OK,
        Json(json!({
            "content": [{"type": "text", "text": "hello"}],
            "usage": {"input_tokens": 7, "output_tokens": 2}
        })),
    )
}

async fn serve(seen: Arc<Seen>) -> String {
    let app = Router::new()
        .route("/chat/completions", post(openai))
        .route("/v1/messages", post(anthropic))
        .with_state(seen);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn request(model: &str) -> ChatRequest {
    let prompt = PromptText {
        role_tag: RoleTag::Narrator,
        body: "write it".into(),
        template: "test".into(),
        warnings: Vec::new(),
    };
    ChatRequest::new(&prompt, model, RequestContext::default())
}

#[tokio::test]
async fn openai_adapter_sends_bearer_and_parses_usage() {
    let seen = Arc::new(Seen::default());
    let base = serve(seen.clone()).await;
    let p = OpenAiCompatible::new("oa", &base, "sk-test", "gpt-x", Duration::from_secs(5)).unwrap();
    let reply = p.send(&request("m")).await.unwrap();
    assert_eq!(reply.body, "narrative text");
    assert_eq!((reply.input_tokens, reply.output_tokens), (Some(11), Some(3)));
    let h = &seen.headers.lock().unwrap()[0];
    assert_eq!(h["authorization"], "Bearer sk-test");
    let b = &seen.bodies.lock().unwrap()[0];
    assert_eq!(b["model"], "gpt-x");
    assert_eq!(b["temperature"], 0.0);
    assert_eq!(b["messages"][0]["content"], "write it");
}

#[tokio::test]
async fn anthropic_adapter_sends_key_and_version() {
    let seen = Arc::new(Seen::default());
    let base = serve(seen.clone()).await;
    let p = Anthropic::new("an", &base, "ak-test", "claude-x", Duration::from_secs(5)).unwrap();
    let reply = p.send(&request("m")).await.unwrap();
    assert_eq!(reply.body, "hello");
    let h = &seen.headers.lock().unwrap()[0];
    assert_eq!(h["x-api-key"], "ak-test");
    assert_eq!(h["anthropic-version"], ANTHROPIC_VERSION);
    assert_eq!(seen.bodies.lock().unwrap()[0]["model"], "claude-x");
}

#[tokio::test]
async fn status_codes_are_classified() {
    for (code, check) in [
        (401u16, (|e: &ProviderError| matches!(e, ProviderError::Auth(_))) as fn(&ProviderError) -> bool),
        (429, |e| matches!(e, ProviderError::RateLimited(_))),
        (503, |e| matches!(e, ProviderError::Transient(_))),
        (400, |e| matches!(e, ProviderError::Fatal(_))),
    ] {
        let seen = Arc::new(Seen::default());
        seen.failures.lock().unwrap().push(code);
        let base = serve(seen.clone()).await;
        let p = OpenAiCompatible::new("oa", &base, "k", "m", Duration::from_secs(5)).unwrap();
        let err = p.send(&request("m")).await.unwrap_err();
        assert!(check(&err), "{code}: {err:?}");
    }
}

#[tokio::test]
async fn gateway_retries_transient_then_succeeds() {
    let seen = Arc::new(Seen::default());
    seen.failures.lock().unwrap().extend([503, 429]);
    let base = serve(seen.clone()).await;
    let p = OpenAiCompatible::new("oa", &base, "k", "m", Duration::from_secs(5)).unwrap();
    let gw = Gateway::builder()
        .provider(Arc::new(p), ["m"], ProviderLimits::default())
        .retry(RetryPolicy::immediate(3))
        .build();
    let resp = gw.complete(&request("m")).await.unwrap();
    assert_eq!(resp.body, "narrative text");
    assert_eq!(seen.hits.load(Ordering::SeqCst), 3);
    assert_eq!(gw.ledger().total_usage().input_tokens, 11);
}

#[tokio::test]
async fn gateway_does_not_retry_auth() {
    let seen = Arc::new(Seen::default());
    seen.failures.lock().unwrap().extend([401, 401, 401]);
    let base = serve(seen.clone()).await;
    let p = Anthropic::new("an", &base, "k", "m", Duration::from_secs(5)).unwrap();
    let gw = Gateway::builder()
        .provider(Arc::new(p), ["m"], ProviderLimits::default())
        .retry(RetryPolicy::immediate(3))
        .build();
    assert!(matches!(gw.complete(&request("m")).await, Err(GatewayError::Auth(_))));
    assert_eq!(seen.hits.load(Ordering::SeqCst), 1);
}
