//! Client for chat-completion and embedding endpoints.
//!
//! Speaks the common `POST {base_url}/chat/completions` and
//! `POST {base_url}/embeddings` JSON protocol, so any hosted or local server
//! can stand in for any model role.

pub mod templates;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::text::whitespace_token_count;

pub use templates::{PromptTemplate, RenderError, Slots};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Proxy,
    Judge,
    Rewriter,
    Reader,
    Embedder,
}

impl ModelRole {
    pub const ALL: [ModelRole; 5] = [Self::Proxy, Self::Judge, Self::Rewriter, Self::Reader, Self::Embedder];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Proxy => "proxy",
            Self::Judge => "judge",
            Self::Rewriter => "rewriter",
            Self::Reader => "reader",
            Self::Embedder => "embedder",
        }
    }

    /// Decoding temperature used when the caller does not override it.
    pub fn default_temperature(self) -> f64 {
        match self {
            Self::Judge | Self::Rewriter => 0.0,
            _ => 0.7,
        }
    }
}

/// A model served behind an HTTP endpoint. Value object; never mutated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub role: ModelRole,
    pub base_url: String,
    #[serde(rename = "model")]
    pub model_name: String,
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default = "default_cost_weight")]
    pub cost_weight: f64,
}

fn default_cost_weight() -> f64 {
    1.0
}

impl ModelEndpoint {
    pub fn new(role: ModelRole, base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            role,
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: String::new(),
            cost_weight: 1.0,
        }
    }

    pub fn with_cost_weight(mut self, w: f64) -> Self {
        self.cost_weight = w;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let url = reqwest::Url::parse(&self.base_url)
            .map_err(|e| GatewayError::InvalidParams(format!("base_url {:?}: {e}", self.base_url)))?;
        if url.cannot_be_a_base() {
            return Err(GatewayError::InvalidParams(format!("base_url {:?} is not absolute", self.base_url)));
        }
        if !(self.cost_weight > 0.0 && self.cost_weight.is_finite()) {
            return Err(GatewayError::InvalidParams(format!("cost_weight must be > 0, got {}", self.cost_weight)));
        }
        Ok(())
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.base_url.trim_end_matches('/'))
    }

    fn api_key(&self) -> Option<String> {
        if self.api_key_env.is_empty() {
            return None;
        }
        std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: MessageRole::User, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self { role: MessageRole::System, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChatParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatParams {
    pub fn for_role(role: ModelRole) -> Self {
        Self { temperature: role.default_temperature(), max_tokens: 512 }
    }
}

/// One completed request/response pair with its token usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub response_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Usage was missing from the response and estimated from whitespace.
    #[serde(default)]
    pub approximate_usage: bool,
}

impl ChatExchange {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    /// Concatenated message contents, as seen by the model.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("endpoint role {actual:?} cannot serve {operation}")]
    WrongRole { actual: ModelRole, operation: &'static str },
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Protocol { status: u16, body: String },
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("integrity error: {0}")]
    Integrity(String),
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub request_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, initial_backoff: Duration::from_millis(500), request_timeout: Duration::from_secs(120) }
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f32>,
    #[serde(default)]
    index: Option<usize>,
}

struct Inner {
    http: reqwest::Client,
    retry: RetryPolicy,
    per_endpoint_limit: usize,
    limits: Mutex<HashMap<String, Arc<Semaphore>>>,
}

/// Shared model client. Cheap to clone; clones share the connection pool
/// and per-endpoint concurrency limits.
#[derive(Clone)]
pub struct Gateway {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("retry", &self.inner.retry)
            .field("per_endpoint_limit", &self.inner.per_endpoint_limit)
            .finish()
    }
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new(RetryPolicy::default(), 4)
    }
}

impl Gateway {
    pub fn new(retry: RetryPolicy, per_endpoint_limit: usize) -> Self {
        let http = reqwest::Client::builder()
            .timeout(retry.request_timeout)
            .build()
            .expect("http client configuration is static");
        Self {
            inner: Arc::new(Inner {
                http,
                retry,
                per_endpoint_limit: per_endpoint_limit.max(1),
                limits: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.inner.retry
    }

    fn limiter(&self, endpoint: &ModelEndpoint) -> Arc<Semaphore> {
        let key = format!("{}#{}", endpoint.base_url, endpoint.model_name);
        let mut map = self.inner.limits.lock().expect("limiter map poisoned");
        map.entry(key).or_insert_with(|| Arc::new(Semaphore::new(self.inner.per_endpoint_limit))).clone()
    }

    async fn post_json(&self, endpoint: &ModelEndpoint, path: &str, body: &serde_json::Value) -> Result<String, GatewayError> {
        let url = endpoint.url(path);
        let limiter = self.limiter(endpoint);
        let _permit = limiter.acquire_owned().await.expect("limiter never closed");
        tracing::debug!(%url, body = %body, "model request");

        let retry = self.inner.retry;
        let attempts = retry.attempts.max(1);
        let mut last: Option<GatewayError> = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                tokio::time::sleep(retry.initial_backoff * 2u32.saturating_pow(attempt - 1)).await;
            }
            let mut req = self.inner.http.post(&url).json(body);
            if let Some(key) = endpoint.api_key() {
                req = req.bearer_auth(key);
            }
            match req.send().await {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp
                        .text()
                        .await
                        .map_err(|e| GatewayError::Decode(format!("reading body: {e}")))?;
                    if status.is_success() {
                        tracing::debug!(%url, body = %text, "model response");
                        return Ok(text);
                    }
                    let err = GatewayError::Protocol { status: status.as_u16(), body: text };
                    if status.as_u16() == 429 || status.is_server_error() {
                        tracing::warn!(%url, status = status.as_u16(), attempt, "retrying model request");
                        last = Some(err);
                        continue;
                    }
                    return Err(err);
                }
                Err(e) => {
                    tracing::warn!(%url, error = %e, attempt, "model request failed");
                    last = Some(GatewayError::Transport { attempts: attempt + 1, message: e.to_string() });
                }
            }
        }
        Err(match last {
            Some(GatewayError::Transport { message, .. }) => GatewayError::Transport { attempts, message },
            Some(other) => other,
            None => GatewayError::Transport { attempts, message: "no attempt made".into() },
        })
    }

    /// Sends one chat completion request.
    pub async fn chat(
        &self,
        endpoint: &ModelEndpoint,
        messages: Vec<ChatMessage>,
        params: ChatParams,
    ) -> Result<ChatExchange, GatewayError> {
        if endpoint.role == ModelRole::Embedder {
            return Err(GatewayError::WrongRole { actual: endpoint.role, operation: "chat" });
        }
        if params.max_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_tokens must be positive".into()));
        }
        if !(params.temperature >= 0.0 && params.temperature.is_finite()) {
            return Err(GatewayError::InvalidParams(format!("temperature {}", params.temperature)));
        }
        if !messages.iter().any(|m| m.role == MessageRole::User) {
            return Err(GatewayError::InvalidInput("at least one user message required".into()));
        }
        endpoint.validate()?;

        let body = json!({
            "model": endpoint.model_name,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let raw = self.post_json(endpoint, "chat/completions", &body).await?;
        let resp: CompletionResponse = serde_json::from_str(&raw).map_err(|e| GatewayError::Decode(e.to_string()))?;
        let response_text = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::Decode("response has no choices".into()))?
            .message
            .content
            .unwrap_or_default();

        let reported = resp.usage.and_then(|u| Some((u.prompt_tokens?, u.completion_tokens?)));
        let (prompt_tokens, completion_tokens, approximate_usage) = match reported {
            Some((p, c)) => (p, c, false),
            None => {
                let p = messages.iter().map(|m| whitespace_token_count(&m.content)).sum();
                (p, whitespace_token_count(&response_text), true)
            }
        };
        Ok(ChatExchange {
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            response_text,
            prompt_tokens,
            completion_tokens,
            approximate_usage,
        })
    }

    /// Embeds a batch of texts, returning unit-length vectors.
    pub async fn embed(&self, endpoint: &ModelEndpoint, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        if endpoint.role != ModelRole::Embedder {
            return Err(GatewayError::WrongRole { actual: endpoint.role, operation: "embed" });
        }
        if texts.is_empty() {
            return Err(GatewayError::InvalidInput("texts must be non-empty".into()));
        }
        endpoint.validate()?;
        let body = json!({ "model": endpoint.model_name, "input": texts });
        let raw = self.post_json(endpoint, "embeddings", &body).await?;
        let resp: EmbeddingResponse = serde_json::from_str(&raw).map_err(|e| GatewayError::Decode(e.to_string()))?;
        if resp.data.len() != texts.len() {
            return Err(GatewayError::Integrity(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                resp.data.len()
            )));
        }
        let mut items = resp.data;
        if items.iter().all(|d| d.index.is_some()) {
            items.sort_by_key(|d| d.index);
        }
        let dim = items[0].embedding.len();
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            if item.embedding.len() != dim || dim == 0 {
                return Err(GatewayError::Integrity(format!(
                    "embedding dimension mismatch: {} vs {}",
                    item.embedding.len(),
                    dim
                )));
            }
            out.push(unit_normalize(item.embedding)?);
        }
        Ok(out)
    }
}

pub fn unit_normalize(mut v: Vec<f32>) -> Result<Vec<f32>, GatewayError> {
    let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(GatewayError::Integrity("zero or non-finite embedding".into()));
    }
    for x in &mut v {
        *x = (f64::from(*x) / norm) as f32;
    }
    Ok(v)
}
