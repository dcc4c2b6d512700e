use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{RetrievalError, ScoredDocument, Stage};
use crate::domain::Document;
use crate::text::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(RetrievalError::InvalidParams(format!("k1 must be positive, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RetrievalError::InvalidParams(format!("b must lie in [0,1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub ordinal: u32,
    pub tf: u32,
}

/// BM25 inverted index. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub(super) params: Bm25Params,
    pub(super) postings: BTreeMap<String, Vec<Posting>>,
    pub(super) doc_lengths: Vec<u32>,
    pub(super) avg_doc_length: f64,
    pub(super) docs: Vec<Document>,
}

pub fn index_tokens(text: &str) -> Vec<String> {
    normalize_text(text).tokens().map(str::to_owned).collect()
}

/// IDF with +1 inside the log, so it is positive for every df ≤ N.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

impl InvertedIndex {
    pub fn build<I>(corpus: I, params: Bm25Params) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = Document>,
    {
        params.validate()?;
        let mut docs = Vec::new();
        let mut seen = HashSet::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();

        for doc in corpus {
            if !seen.insert(doc.doc_id.clone()) {
                return Err(RetrievalError::DuplicateDocId(doc.doc_id));
            }
            if doc.text.trim().is_empty() {
                return Err(RetrievalError::EmptyDocument(doc.doc_id));
            }
            let ordinal = u32::try_from(docs.len()).map_err(|_| RetrievalError::InvalidParams("corpus too large".into()))?;
            let tokens = index_tokens(&doc.text);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { ordinal, tf: count });
            }
            doc_lengths.push(tokens.len() as u32);
            docs.push(doc);
        }
        if docs.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        if total == 0 {
            return Err(RetrievalError::EmptyCorpus);
        }
        // Ordinals are pushed in increasing order, so each list is already sorted.
        let avg_doc_length = total as f64 / docs.len() as f64;
        Ok(Self { params, postings, doc_lengths, avg_doc_length, docs })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn document(&self, ordinal: usize) -> Option<&Document> {
        self.docs.get(ordinal)
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    /// Ordinal-score pairs for every document matching at least one query
    /// term, best first, ties by ascending ordinal.
    pub fn score_all(&self, query: &str) -> Vec<(u32, f64)> {
        let terms: BTreeSet<String> = index_tokens(query).into_iter().collect();
        let Bm25Params { k1, b } = self.params;
        let n = self.docs.len();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let w = idf(n, list.len());
            for p in list {
                let tf = f64::from(p.tf);
                let len = f64::from(self.doc_lengths[p.ordinal as usize]);
                let norm = tf + k1 * (1.0 - b + b * len / self.avg_doc_length);
                *scores.entry(p.ordinal).or_default() += w * tf * (k1 + 1.0) / norm;
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }

    pub fn search(&self, query: &str, k: usize) -> Vec<ScoredDocument> {
        self.score_all(query)
            .into_iter()
            .take(k)
            .map(|(ord, score)| ScoredDocument {
                document: self.docs[ord as usize].clone(),
                score,
                source_query: query.to_owned(),
                stage: Stage::Bm25,
            })
            .collect()
    }
}
