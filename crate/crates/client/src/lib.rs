//! Typed client for the slim-rag HTTP service.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use slim_rag_core::eval::{EvalMode, EvalReport};
use slim_rag_core::pipeline::ResultRecord;
use slim_rag_core::Question;
pub use slim_rag_service::{
    AnswerRequest, AnswerResponse, ErrorBody, EvaluateRequest, HealthResponse, HeuristicRequest, JudgeResponse,
    RewriteResponse, RougeRequest, RougeResponse, SearchRequest, SearchResponse, ShortMetricsRequest,
    ShortMetricsResponse,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid base url {0:?}")]
    BaseUrl(String),
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    /// The service answered with a non-2xx status.
    #[error("service returned {status}: {message}")]
    Api { status: u16, message: String },
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: reqwest::Url,
}

impl Client {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        Self::with_timeout(base_url, Duration::from_secs(300))
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Result<Self, ClientError> {
        let mut base: reqwest::Url = base_url.parse().map_err(|_| ClientError::BaseUrl(base_url.into()))?;
        if base.cannot_be_a_base() || !matches!(base.scheme(), "http" | "https") {
            return Err(ClientError::BaseUrl(base_url.into()));
        }
        if !base.path().ends_with('/') {
            let path = format!("{}/", base.path());
            base.set_path(&path);
        }
        let http = reqwest::Client::builder().timeout(timeout).build()?;
        Ok(Self { http, base })
    }

    fn url(&self, path: &str) -> reqwest::Url {
        self.base.join(path).expect("static relative path")
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
        Err(ClientError::Api { status: status.as_u16(), message })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let resp = self.http.post(self.url(path)).json(body).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        let resp = self.http.get(self.url("health")).send().await?;
        Self::decode(resp).await
    }

    pub async fn answer(&self, question: &Question) -> Result<AnswerResponse, ClientError> {
        self.post("v1/answer", &AnswerRequest { question: question.clone() }).await
    }

    pub async fn judge(&self, question: &str, heuristic_answer: &str) -> Result<JudgeResponse, ClientError> {
        self.post("v1/judge", &HeuristicRequest { question: question.into(), heuristic_answer: heuristic_answer.into() })
            .await
    }

    pub async fn rewrite(&self, question: &str, heuristic_answer: &str) -> Result<RewriteResponse, ClientError> {
        self.post("v1/rewrite", &HeuristicRequest { question: question.into(), heuristic_answer: heuristic_answer.into() })
            .await
    }

    pub async fn search(&self, query: &str, k: Option<usize>) -> Result<SearchResponse, ClientError> {
        self.post("v1/search", &SearchRequest { query: query.into(), k }).await
    }

    pub async fn short_metrics(&self, prediction: &str, golds: &[String]) -> Result<ShortMetricsResponse, ClientError> {
        self.post("v1/metrics/short", &ShortMetricsRequest { prediction: prediction.into(), golds: golds.to_vec() })
            .await
    }

    pub async fn rouge(&self, prediction: &str, reference: &str) -> Result<RougeResponse, ClientError> {
        self.post("v1/metrics/rouge", &RougeRequest { prediction: prediction.into(), reference: reference.into() })
            .await
    }

    pub async fn evaluate(&self, results: &[ResultRecord], dataset: &[Question], mode: EvalMode) -> Result<EvalReport, ClientError> {
        self.post("v1/evaluate", &EvaluateRequest { results: results.to_vec(), dataset: dataset.to_vec(), mode }).await
    }
}
