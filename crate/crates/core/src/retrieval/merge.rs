use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::ScoredDocument;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryProvenance {
    pub query: String,
    pub doc_ids: Vec<String>,
}

/// The merged references handed to the reader.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub entries: Vec<ScoredDocument>,
    pub per_query_provenance: Vec<QueryProvenance>,
}

impl ReferenceSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.document.doc_id.as_str()).collect()
    }
}

/// Round-robin interleave of per-query result lists, skipping documents
/// already taken, until `budget` entries are collected. Scores from
/// different queries are not compared.
pub fn merge_references(per_query: &[(String, Vec<ScoredDocument>)], budget: usize) -> ReferenceSet {
    let mut taken = HashSet::new();
    let mut entries = Vec::new();
    let mut provenance: Vec<QueryProvenance> = per_query
        .iter()
        .map(|(q, _)| QueryProvenance { query: q.clone(), doc_ids: Vec::new() })
        .collect();
    let depth = per_query.iter().map(|(_, l)| l.len()).max().unwrap_or(0);

    'rounds: for rank in 0..depth {
        for (qi, (_, list)) in per_query.iter().enumerate() {
            if entries.len() >= budget {
                break 'rounds;
            }
            let Some(doc) = list.get(rank) else { continue };
            if taken.insert(doc.document.doc_id.clone()) {
                provenance[qi].doc_ids.push(doc.document.doc_id.clone());
                entries.push(doc.clone());
            }
        }
    }
    ReferenceSet { entries, per_query_provenance: provenance }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Document;
    use crate::retrieval::Stage;
    use proptest::prelude::*;

    fn list(q: &str, ids: &[&str]) -> (String, Vec<ScoredDocument>) {
        let docs = ids
            .iter()
            .enumerate()
            .map(|(i, id)| ScoredDocument {
                document: Document::new(*id, "", format!("text {id}")),
                score: 10.0 - i as f64,
                source_query: q.into(),
                stage: Stage::Bm25,
            })
            .collect();
        (q.to_string(), docs)
    }

    #[test]
    fn interleaves_round_robin() {
        let merged = merge_references(&[list("q1", &["a", "b"]), list("q2", &["c", "d"])], 3);
        assert_eq!(merged.doc_ids(), ["a", "c", "b"]);
        assert_eq!(merged.per_query_provenance[0].doc_ids, ["a", "b"]);
        assert_eq!(merged.per_query_provenance[1].doc_ids, ["c"]);
    }

    #[test]
    fn deduplicates_across_queries() {
        let merged = merge_references(&[list("q1", &["a"]), list("q2", &["a"])], 2);
        assert_eq!(merged.doc_ids(), ["a"]);
        assert!(merged.per_query_provenance[1].doc_ids.is_empty());
    }

    #[test]
    fn single_query_is_identity() {
        let merged = merge_references(&[list("q", &["x", "y", "z"])], 5);
        assert_eq!(merged.doc_ids(), ["x", "y", "z"]);
        assert!(merge_references(&[list("q", &[])], 5).is_empty());
    }

    proptest! {
        #[test]
        fn respects_budget_and_uniqueness(
            lists in prop::collection::vec(prop::collection::vec(0u8..12, 0..8), 1..5),
            budget in 1usize..10,
        ) {
            let names: Vec<Vec<String>> = lists.iter().map(|l| l.iter().map(|d| format!("d{d}")).collect()).collect();
            let input: Vec<_> = names
                .iter()
                .enumerate()
                .map(|(i, l)| list(&format!("q{i}"), &l.iter().map(String::as_str).collect::<Vec<_>>()))
                .collect();
            let merged = merge_references(&input, budget);
            prop_assert!(merged.len() <= budget);
            let ids = merged.doc_ids();
            let unique: HashSet<_> = ids.iter().collect();
            prop_assert_eq!(unique.len(), ids.len());
        }
    }
}
