//! Deterministic stand-in for a chat/embedding model server.
//!
//! Chat responses come from an ordered rule list (first substring match on
//! the incoming prompt wins). Embeddings are derived from a stable hash of
//! the text, so the same text always yields the same unit vector.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::gateway::ChatMessage;
use crate::text::whitespace_token_count;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(rename = "default", default)]
    pub default_response: String,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub latency_ms: u64,
}

fn default_dim() -> usize {
    32
}

impl Default for MockScript {
    fn default() -> Self {
        Self { rules: Vec::new(), default_response: String::new(), embedding_dim: default_dim(), latency_ms: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("cannot read mock script {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid mock script: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("embedding_dim must be positive")]
    ZeroDimension,
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
}

impl MockScript {
    pub fn from_json(s: &str) -> Result<Self, MockError> {
        let script: Self = serde_json::from_str(s)?;
        if script.embedding_dim == 0 {
            return Err(MockError::ZeroDimension);
        }
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MockError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|source| MockError::Read { path: path.display().to_string(), source })?;
        Self::from_json(&raw)
    }

    pub fn rule(mut self, contains: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(MockRule { contains: contains.into(), response: response.into() });
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = response.into();
        self
    }

    pub fn respond(&self, prompt: &str) -> &str {
        self.rules
            .iter()
            .find(|r| prompt.contains(&r.contains))
            .map(|r| r.response.as_str())
            .unwrap_or(&self.default_response)
    }

    pub fn embedding(&self, text: &str) -> Vec<f32> {
        hash_embedding(text, self.embedding_dim)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Unit vector derived from FNV-1a of the text, expanded with splitmix64.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f32> {
    let seed = fnv1a64(text.as_bytes());
    let raw: Vec<f64> = (0..dim as u64)
        .map(|i| {
            let bits = splitmix64(seed ^ splitmix64(i));
            // top 53 bits → [0,1) → [-1,1)
            (bits >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    raw.into_iter().map(|x| (x / norm) as f32).collect()
}

#[derive(Deserialize)]
struct ChatRequest {
    #[serde(default)]
    model: String,
    messages: Vec<ChatMessage>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingInput {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
struct EmbeddingRequest {
    #[serde(default)]
    model: String,
    input: EmbeddingInput,
}

async fn chat_completions(State(script): State<Arc<MockScript>>, Json(req): Json<ChatRequest>) -> Response {
    if script.latency_ms > 0 {
        tokio::time::sleep(Duration::from_millis(script.latency_ms)).await;
    }
    if req.messages.is_empty() {
        return (StatusCode::BAD_REQUEST, Json(json!({"error": {"message": "messages must be non-empty"}})))
            .into_response();
    }
    let prompt = req.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
    let answer = script.respond(&prompt);
    let prompt_tokens: u64 = req.messages.iter().map(|m| whitespace_token_count(&m.content)).sum();
    let completion_tokens = whitespace_token_count(answer);
    Json(json!({
        "id": "mock-chat",
        "object": "chat.completion",
        "model": req.model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": answer},
            "finish_reason": "stop"
        }],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens
        }
    }))
    .into_response()
}

async fn embeddings(State(script): State<Arc<MockScript>>, Json(req): Json<EmbeddingRequest>) -> Response {
    if script.latency_ms > 0 {
        tokio::time::sleep(Duration::from_millis(script.latency_ms)).await;
    }
    let inputs = match req.input {
        EmbeddingInput::One(s) => vec![s],
        EmbeddingInput::Many(v) => v,
    };
    let data: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"object": "embedding", "index": i, "embedding": script.embedding(t)}))
        .collect();
    let tokens: u64 = inputs.iter().map(|t| whitespace_token_count(t)).sum();
    Json(json!({
        "object": "list",
        "model": req.model,
        "data": data,
        "usage": {"prompt_tokens": tokens, "total_tokens": tokens}
    }))
    .into_response()
}

pub fn router(script: MockScript) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/chat/completions", post(chat_completions))
        .route("/v1/chat/completions", post(chat_completions))
        .route("/embeddings", post(embeddings))
        .route("/v1/embeddings", post(embeddings))
        .with_state(Arc::new(script))
}

/// A mock server running on a background task.
pub struct MockServer {
    pub addr: SocketAddr,
    handle: tokio::task::JoinHandle<()>,
}

impl MockServer {
    /// Binds to `addr` (use port 0 for an ephemeral port) and starts serving.
    pub async fn start(script: MockScript, addr: &str) -> Result<Self, MockError> {
        let listener = TcpListener::bind(addr)
            .await
            .map_err(|source| MockError::Bind { addr: addr.to_owned(), source })?;
        let local = listener.local_addr().map_err(|source| MockError::Bind { addr: addr.to_owned(), source })?;
        let app = router(script);
        let handle = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                tracing::error!(error = %e, "mock server stopped");
            }
        });
        Ok(Self { addr: local, handle })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

/// Serves until the process is stopped.
pub async fn serve(script: MockScript, addr: &str) -> Result<(), MockError> {
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| MockError::Bind { addr: addr.to_owned(), source })?;
    tracing::info!(addr = %listener.local_addr().map(|a| a.to_string()).unwrap_or_default(), "mock llm listening");
    axum::serve(listener, router(script))
        .await
        .map_err(|source| MockError::Bind { addr: addr.to_owned(), source })
}
