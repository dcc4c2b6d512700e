use async_trait::async_trait;

use super::{RetrievalError, ScoredDocument, Stage};
use crate::gateway::{Gateway, GatewayError, ModelEndpoint};

#[async_trait]
pub trait Embedder: Send + Sync {
    /// One unit vector per input text.
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;
}

/// Embedder backed by an embedding endpoint.
#[derive(Debug, Clone)]
pub struct EndpointEmbedder {
    gateway: Gateway,
    endpoint: ModelEndpoint,
}

impl EndpointEmbedder {
    pub fn new(gateway: Gateway, endpoint: ModelEndpoint) -> Self {
        Self { gateway, endpoint }
    }
}

#[async_trait]
impl Embedder for EndpointEmbedder {
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        self.gateway.embed(&self.endpoint, texts).await
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub results: Vec<ScoredDocument>,
    /// Set when the embedder failed and BM25 order was kept.
    pub warning: Option<String>,
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// Reorders candidates by cosine similarity between the query and each
/// passage embedding. Equal similarities keep their incoming order.
pub async fn rerank(
    query: &str,
    candidates: Vec<ScoredDocument>,
    embedder: &dyn Embedder,
    top_k: usize,
) -> Result<RerankOutcome, RetrievalError> {
    if candidates.is_empty() {
        return Err(RetrievalError::EmptyCandidates);
    }
    let mut texts = Vec::with_capacity(candidates.len() + 1);
    texts.push(format!("query: {query}"));
    texts.extend(candidates.iter().map(|c| format!("passage: {} {}", c.document.title, c.document.text)));

    let vectors = match embedder.embed(&texts).await {
        Ok(v) if v.len() == texts.len() => v,
        Ok(v) => {
            return Ok(fallback(candidates, top_k, format!("embedder returned {} vectors for {} texts", v.len(), texts.len())))
        }
        Err(e) => return Ok(fallback(candidates, top_k, format!("rerank failed, keeping BM25 order: {e}"))),
    };
    let (q, passages) = vectors.split_first().expect("non-empty");
    let mut scored: Vec<(f64, ScoredDocument)> =
        passages.iter().map(|p| dot(q, p)).zip(candidates).collect();
    // stable: ties keep BM25 order
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let results = scored
        .into_iter()
        .take(top_k)
        .map(|(sim, mut doc)| {
            doc.score = sim;
            doc.stage = Stage::Reranked;
            doc
        })
        .collect();
    Ok(RerankOutcome { results, warning: None })
}

fn fallback(candidates: Vec<ScoredDocument>, top_k: usize, warning: String) -> RerankOutcome {
    tracing::warn!(%warning);
    RerankOutcome { results: candidates.into_iter().take(top_k).collect(), warning: Some(warning) }
}
