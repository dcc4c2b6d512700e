//! Query rewriting from heuristic answers.
//!
//! The rewriter emits `<Claim> c <Query> q` units, one per factual claim in
//! the heuristic answer, optionally preceded by bare `<Query> q` units that
//! rewrite the question itself. Claim queries are then filtered through the
//! judge so only claims the reader does not already know get retrieved.

use std::future::Future;

use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::gateway::templates::ANNOTATION_SYS;
use crate::gateway::{ChatExchange, ChatParams, Gateway, GatewayError, ModelEndpoint, ModelRole, PromptTemplate, Slots};
use crate::judgment::Verdict;

pub const CLAIM_TOKEN: &str = "<Claim>";
pub const QUERY_TOKEN: &str = "<Query>";

#[derive(Debug, thiserror::Error)]
pub enum RewriteError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no claim/query units in rewriter output: {raw_output:?}")]
    Parse { raw_output: String, exchange: Option<Box<ChatExchange>> },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimQuery {
    pub claim: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needs_search: Option<bool>,
}

impl ClaimQuery {
    pub fn new(claim: impl Into<String>, query: impl Into<String>) -> Self {
        Self { claim: claim.into(), query: query.into(), needs_search: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRewrite {
    pub question_queries: Vec<String>,
    pub claim_queries: Vec<ClaimQuery>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteResult {
    pub question_queries: Vec<String>,
    pub claim_queries: Vec<ClaimQuery>,
    pub raw_output: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

enum Marker {
    Claim,
    Query,
}

fn next_marker(s: &str) -> Option<(usize, Marker)> {
    let claim = s.find(CLAIM_TOKEN).map(|i| (i, Marker::Claim));
    let query = s.find(QUERY_TOKEN).map(|i| (i, Marker::Query));
    match (claim, query) {
        (Some(c), Some(q)) => Some(if c.0 < q.0 { c } else { q }),
        (c, q) => c.or(q),
    }
}

/// Parses `<Claim> … <Query> …` output. Units keep their original order.
pub fn parse_rewrite_output(raw: &str) -> Result<ParsedRewrite, RewriteError> {
    let mut segments: Vec<(Marker, String)> = Vec::new();
    let mut warnings = Vec::new();
    let mut rest = raw;
    match next_marker(rest) {
        Some((0, _)) => {}
        Some((i, _)) if !rest[..i].trim().is_empty() => warnings.push("ignored text before first unit".to_owned()),
        _ => {}
    }
    while let Some((start, marker)) = next_marker(rest) {
        let after = &rest[start + match marker {
            Marker::Claim => CLAIM_TOKEN.len(),
            Marker::Query => QUERY_TOKEN.len(),
        }..];
        let end = next_marker(after).map_or(after.len(), |(i, _)| i);
        segments.push((marker, after[..end].trim().to_owned()));
        rest = &after[end..];
    }

    let mut out = ParsedRewrite { warnings, ..ParsedRewrite::default() };
    let mut pending: Option<String> = None;
    let mut after_pair = false;
    for (marker, text) in segments {
        match marker {
            Marker::Claim => {
                if let Some(orphan) = pending.replace(text) {
                    out.warnings.push(format!("claim {orphan:?} has no query; dropped"));
                }
            }
            Marker::Query => match pending.take() {
                Some(claim) if !claim.is_empty() && !text.is_empty() => {
                    out.claim_queries.push(ClaimQuery::new(claim, text));
                    after_pair = true;
                }
                Some(claim) => out.warnings.push(format!("unit with empty claim or query dropped ({claim:?}, {text:?})")),
                None if text.is_empty() => out.warnings.push("empty question-level query dropped".to_owned()),
                None => {
                    if after_pair {
                        out.warnings
                            .push(format!("repeated {QUERY_TOKEN} token; {text:?} treated as a question-level query"));
                    }
                    out.question_queries.push(text);
                }
            },
        }
    }
    if let Some(orphan) = pending {
        out.warnings.push(format!("claim {orphan:?} has no query; dropped"));
    }
    if out.claim_queries.is_empty() && out.question_queries.is_empty() {
        return Err(RewriteError::Parse { raw_output: raw.to_owned(), exchange: None });
    }
    Ok(out)
}

/// Inverse of [`parse_rewrite_output`] for reserved-token-free text.
pub fn format_rewrite_output(question_queries: &[String], claims: &[ClaimQuery]) -> String {
    let mut parts = Vec::new();
    for q in question_queries {
        parts.push(format!("{QUERY_TOKEN} {q}"));
    }
    for c in claims {
        parts.push(format!("{CLAIM_TOKEN} {} {QUERY_TOKEN} {}", c.claim, c.query));
    }
    parts.join(" ")
}

/// Calls the rewriter model and parses its output. The original question
/// is used as the question-level query when the model gives none.
pub async fn rewrite(
    gateway: &Gateway,
    endpoint: &ModelEndpoint,
    question: &str,
    heuristic_answer: &str,
) -> Result<(RewriteResult, ChatExchange), RewriteError> {
    if question.trim().is_empty() || heuristic_answer.trim().is_empty() {
        return Err(RewriteError::InvalidInput("question and heuristic answer must be non-empty".into()));
    }
    let messages = PromptTemplate::Rewrite
        .render(&Slots::question(question).with_heuristic_answer(heuristic_answer))
        .expect("both rewrite slots supplied");
    let params = ChatParams { temperature: 0.0, ..ChatParams::for_role(ModelRole::Rewriter) };
    let exchange = gateway.chat(endpoint, messages, params).await?;
    let raw = exchange.response_text.clone();
    let parsed = match parse_rewrite_output(&raw) {
        Ok(p) => p,
        Err(_) => return Err(RewriteError::Parse { raw_output: raw, exchange: Some(Box::new(exchange)) }),
    };
    let mut question_queries = parsed.question_queries;
    if question_queries.is_empty() {
        question_queries.push(question.trim().to_owned());
    }
    Ok((
        RewriteResult { question_queries, claim_queries: parsed.claim_queries, raw_output: raw, warnings: parsed.warnings },
        exchange,
    ))
}

/// Outcome of checking one claim query against the judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimDecision {
    pub claim: String,
    pub query: String,
    pub kept: bool,
    pub verdict: Option<Verdict>,
    /// Judge failure message; such queries are kept.
    pub error: Option<String>,
}

/// Runs `judge_fn(query, claim)` for every pair: the rewritten query fills
/// the question slot and the claim fills the heuristic-answer slot. A query
/// survives when the verdict is `known = false` or the judge failed.
pub async fn filter_claim_queries<F, Fut, E>(pairs: &[ClaimQuery], judge_fn: F) -> Vec<ClaimDecision>
where
    F: Fn(String, String) -> Fut,
    Fut: Future<Output = Result<Verdict, E>>,
    E: std::fmt::Display,
{
    let calls = pairs.iter().map(|p| judge_fn(p.query.clone(), p.claim.clone()));
    join_all(calls)
        .await
        .into_iter()
        .zip(pairs)
        .map(|(res, p)| match res {
            Ok(v) => ClaimDecision { claim: p.claim.clone(), query: p.query.clone(), kept: !v.known, verdict: Some(v), error: None },
            Err(e) => ClaimDecision {
                claim: p.claim.clone(),
                query: p.query.clone(),
                kept: true,
                verdict: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

pub fn surviving_queries(decisions: &[ClaimDecision]) -> Vec<String> {
    decisions.iter().filter(|d| d.kept).map(|d| d.query.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub question_id: String,
    pub prompt: String,
}

/// Prompt asking an external annotator to split the heuristic answer into
/// claims with search flags and queries. Does not call any model.
pub fn build_annotation_request(question: &str, heuristic_answer: &str) -> Result<String, RewriteError> {
    if question.trim().is_empty() || heuristic_answer.trim().is_empty() {
        return Err(RewriteError::InvalidInput("question and heuristic answer must be non-empty".into()));
    }
    let messages = PromptTemplate::AnnotationGpt4
        .render(&Slots::question(question).with_heuristic_answer(heuristic_answer))
        .expect("annotation slots supplied");
    debug_assert!(messages[0].content.starts_with(ANNOTATION_SYS));
    Ok(messages.into_iter().map(|m| m.content).collect::<Vec<_>>().join("\n"))
}

const ANN_CLAIM: &str = "<Claim(";
const ANN_SEARCH: &str = "<Search(";
const ANN_QUERY: &str = "<Query(";

/// Reads the body of a `<Tag(...)>` token starting right after the opening
/// parenthesis. Nested parentheses are matched by depth; returns the body
/// and the byte offset just past the closing `)>`.
fn read_token_body(s: &str) -> Option<(&str, usize)> {
    let bytes = s.as_bytes();
    let mut depth = 1usize;
    for (i, &c) in bytes.iter().enumerate() {
        match c {
            b'(' => depth += 1,
            b')' => {
                if depth == 1 {
                    if bytes.get(i + 1) == Some(&b'>') {
                        return Some((&s[..i], i + 2));
                    }
                } else {
                    depth -= 1;
                }
            }
            _ => {}
        }
    }
    s.find(")>").map(|i| (&s[..i], i + 2))
}

/// Parses `<Claim(c)> <Search(True/False)> <Query(q)>` triples.
pub fn parse_annotation_output(raw: &str) -> Result<Vec<ClaimQuery>, RewriteError> {
    struct Partial {
        claim: String,
        search: Option<bool>,
        query: String,
    }
    let mut done: Vec<Partial> = Vec::new();
    let mut current: Option<Partial> = None;
    let mut pos = 0;
    loop {
        let rest = &raw[pos..];
        let next = [ANN_CLAIM, ANN_SEARCH, ANN_QUERY]
            .into_iter()
            .filter_map(|tag| rest.find(tag).map(|i| (i, tag)))
            .min_by_key(|(i, _)| *i);
        let Some((at, tag)) = next else { break };
        let body_start = pos + at + tag.len();
        let Some((body, consumed)) = read_token_body(&raw[body_start..]) else { break };
        pos = body_start + consumed;
        let body = body.trim();
        match tag {
            ANN_CLAIM => {
                done.extend(current.take());
                current = Some(Partial { claim: body.to_owned(), search: None, query: String::new() });
            }
            ANN_SEARCH => {
                if let Some(c) = current.as_mut() {
                    c.search = match body.to_ascii_lowercase().as_str() {
                        "true" => Some(true),
                        "false" => Some(false),
                        _ => None,
                    };
                }
            }
            _ => {
                if let Some(c) = current.as_mut() {
                    c.query = body.to_owned();
                }
            }
        }
    }
    done.extend(current);

    let out: Vec<ClaimQuery> = done
        .into_iter()
        .filter(|p| !p.claim.is_empty())
        .filter_map(|p| {
            let needs = p.search.unwrap_or(!p.query.is_empty());
            if needs && p.query.is_empty() {
                return None;
            }
            Some(ClaimQuery { claim: p.claim, query: p.query, needs_search: Some(needs) })
        })
        .collect();
    if out.is_empty() {
        return Err(RewriteError::Parse { raw_output: raw.to_owned(), exchange: None });
    }
    Ok(out)
}
