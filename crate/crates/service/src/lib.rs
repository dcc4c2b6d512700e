//! HTTP/JSON front end for a [`slim_rag_core::Engine`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use slim_rag_core::eval::{self, EvalMode, EvalReport};
use slim_rag_core::judgment::{self, Verdict};
use slim_rag_core::pipeline::{Engine, PipelineError, PipelineTrace, ResultRecord};
use slim_rag_core::retrieval::ScoredDocument;
use slim_rag_core::rewrite::{self, RewriteResult};
use slim_rag_core::{ModelRole, Question};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("failed to bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(#[from] std::io::Error),
}

/// JSON body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    fn upstream(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_GATEWAY, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidInput(_) | PipelineError::Config(_) | PipelineError::MissingIndex(_) => {
                Self::bad_request(e.to_string())
            }
            _ => Self::upstream(e.to_string()),
        }
    }
}

impl From<eval::EvalError> for ApiError {
    fn from(e: eval::EvalError) -> Self {
        Self::bad_request(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub mode: String,
    pub has_index: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub question: Question,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub result: ResultRecord,
    pub trace: PipelineTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeuristicRequest {
    pub question: String,
    pub heuristic_answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub verdict: Verdict,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteResponse {
    pub rewrite: RewriteResult,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub results: Vec<ScoredDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortMetricsRequest {
    pub prediction: String,
    pub golds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortMetricsResponse {
    pub em: f64,
    pub strict_em: bool,
    pub hit_at_1: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RougeRequest {
    pub prediction: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeResponse {
    pub rouge1: eval::RougeScore,
    pub rouge2: eval::RougeScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: eval::RougeScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub results: Vec<ResultRecord>,
    pub dataset: Vec<Question>,
    #[serde(default)]
    pub mode: EvalMode,
}

pub type AppState = Arc<Engine>;

pub fn router(engine: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/answer", post(answer))
        .route("/v1/judge", post(judge))
        .route("/v1/rewrite", post(rewrite_query))
        .route("/v1/search", post(search))
        .route("/v1/metrics/short", post(short_metrics))
        .route("/v1/metrics/rouge", post(rouge))
        .route("/v1/evaluate", post(evaluate))
        .with_state(engine)
}

async fn health(State(engine): State<AppState>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        mode: engine.config().mode.as_str().into(),
        has_index: engine.retriever().is_some(),
    })
}

async fn answer(State(engine): State<AppState>, Json(req): Json<AnswerRequest>) -> Result<Json<AnswerResponse>, ApiError> {
    let trace = engine.run_question(&req.question).await?;
    let result = ResultRecord::from_trace(&trace, engine.account(&trace));
    Ok(Json(AnswerResponse { result, trace }))
}

fn configured(engine: &Engine, role: ModelRole) -> Result<slim_rag_core::ModelEndpoint, ApiError> {
    engine
        .config()
        .endpoint(role)
        .ok_or_else(|| ApiError::bad_request(format!("no {} endpoint configured", role.as_str())))
}

async fn judge(State(engine): State<AppState>, Json(req): Json<HeuristicRequest>) -> Result<Json<JudgeResponse>, ApiError> {
    let endpoint = configured(&engine, ModelRole::Judge)?;
    match judgment::judge(engine.gateway(), &endpoint, &req.question, &req.heuristic_answer).await {
        Ok((verdict, ex)) => Ok(Json(JudgeResponse { verdict, tokens: ex.total_tokens() })),
        Err(judgment::JudgmentError::InvalidInput(m)) => Err(ApiError::bad_request(m)),
        Err(e) => Err(ApiError::upstream(e.to_string())),
    }
}

async fn rewrite_query(State(engine): State<AppState>, Json(req): Json<HeuristicRequest>) -> Result<Json<RewriteResponse>, ApiError> {
    let endpoint = configured(&engine, ModelRole::Rewriter)?;
    match rewrite::rewrite(engine.gateway(), &endpoint, &req.question, &req.heuristic_answer).await {
        Ok((rewrite, ex)) => Ok(Json(RewriteResponse { rewrite, tokens: ex.total_tokens() })),
        Err(rewrite::RewriteError::InvalidInput(m)) => Err(ApiError::bad_request(m)),
        Err(e) => Err(ApiError::upstream(e.to_string())),
    }
}

async fn search(State(engine): State<AppState>, Json(req): Json<SearchRequest>) -> Result<Json<SearchResponse>, ApiError> {
    let retriever = engine.retriever().ok_or_else(|| ApiError::bad_request("no index loaded"))?;
    if req.query.trim().is_empty() {
        return Err(ApiError::bad_request("query is empty"));
    }
    let (mut results, warning) = retriever.retrieve(&req.query).await;
    if let Some(k) = req.k {
        results.truncate(k);
    }
    Ok(Json(SearchResponse { results, warning }))
}

async fn short_metrics(Json(req): Json<ShortMetricsRequest>) -> Result<Json<ShortMetricsResponse>, ApiError> {
    let em = eval::em_coverage(&req.prediction, &req.golds)?;
    Ok(Json(ShortMetricsResponse { em, strict_em: eval::strict_em(&req.prediction, &req.golds)?, hit_at_1: em > 0.0 }))
}

async fn rouge(Json(req): Json<RougeRequest>) -> Result<Json<RougeResponse>, ApiError> {
    Ok(Json(RougeResponse {
        rouge1: eval::rouge_n(&req.prediction, &req.reference, 1)?,
        rouge2: eval::rouge_n(&req.prediction, &req.reference, 2)?,
        rouge_l: eval::rouge_l(&req.prediction, &req.reference),
    }))
}

async fn evaluate(Json(req): Json<EvaluateRequest>) -> Result<Json<EvalReport>, ApiError> {
    Ok(Json(eval::evaluate_records(&req.results, &req.dataset, req.mode)?))
}

/// Serves `engine` on `addr` until the process receives ctrl-c.
pub async fn serve(engine: Engine, addr: &str) -> Result<(), ServiceError> {
    let listener = TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind { addr: addr.into(), source })?;
    tracing::info!(addr = %listener.local_addr()?, "service listening");
    axum::serve(listener, router(Arc::new(engine)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// A service running on a background task; stopped on drop.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    task: JoinHandle<()>,
}

impl ServiceHandle {
    pub async fn start(engine: Engine, addr: &str) -> Result<Self, ServiceError> {
        let listener = TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind { addr: addr.into(), source })?;
        let addr = listener.local_addr()?;
        let app = router(Arc::new(engine));
        let task = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                tracing::error!(error = %e, "service stopped");
            }
        });
        Ok(Self { addr, task })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}
