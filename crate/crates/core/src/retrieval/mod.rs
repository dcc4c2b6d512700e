//! Lexical retrieval, embedding reranking and reference-set assembly.

mod index;
mod merge;
mod persist;
mod rerank;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::Document;

pub use index::{idf, index_tokens, Bm25Params, InvertedIndex, Posting};
pub use merge::{merge_references, QueryProvenance, ReferenceSet};
pub use persist::{FORMAT_VERSION, MAGIC};
pub use rerank::{rerank, Embedder, EndpointEmbedder, RerankOutcome};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("corpus is empty or has no indexable tokens")]
    EmptyCorpus,
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("document {0:?} has empty text")]
    EmptyDocument(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no candidates to rerank")]
    EmptyCandidates,
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Bm25,
    Reranked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub document: Document,
    pub score: f64,
    pub source_query: String,
    pub stage: Stage,
}

/// Depths used by [`Retriever::retrieve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalDepths {
    pub bm25: usize,
    pub rerank: usize,
}

impl Default for RetrievalDepths {
    fn default() -> Self {
        Self { bm25: 100, rerank: 5 }
    }
}

/// BM25 first stage plus optional embedding rerank for one query.
#[derive(Clone)]
pub struct Retriever {
    index: Arc<InvertedIndex>,
    embedder: Option<Arc<dyn Embedder>>,
    depths: RetrievalDepths,
}

impl Retriever {
    pub fn new(index: Arc<InvertedIndex>, embedder: Option<Arc<dyn Embedder>>, depths: RetrievalDepths) -> Self {
        Self { index, embedder, depths }
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    /// Returns the top documents for `query`; a rerank failure falls back to
    /// BM25 order and reports the reason as a warning.
    pub async fn retrieve(&self, query: &str) -> (Vec<ScoredDocument>, Option<String>) {
        let first = self.index.search(query, self.depths.bm25);
        if first.is_empty() {
            return (first, None);
        }
        match &self.embedder {
            Some(embedder) => match rerank(query, first, embedder.as_ref(), self.depths.rerank).await {
                Ok(outcome) => (outcome.results, outcome.warning),
                Err(e) => (Vec::new(), Some(e.to_string())),
            },
            None => (first.into_iter().take(self.depths.rerank).collect(), None),
        }
    }
}

impl std::fmt::Debug for Retriever {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Retriever")
            .field("docs", &self.index.doc_count())
            .field("rerank", &self.embedder.is_some())
            .field("depths", &self.depths)
            .finish()
    }
}
