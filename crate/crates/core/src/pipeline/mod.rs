//! End-to-end question answering.
//!
//! In `slimplm` mode each question goes through: proxy answer, then judge
//! and rewriter side by side, claim filtering, and finally one reader call
//! with or without references. Baseline modes reuse the same reader path.

mod config;
mod cost;
mod runner;

use std::sync::{Arc, Mutex};

use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::domain::Question;
use crate::gateway::{ChatExchange, ChatMessage, ChatParams, Gateway, GatewayError, ModelEndpoint, ModelRole, PromptTemplate, Slots};
use crate::judgment::{self, Verdict};
use crate::retrieval::{merge_references, EndpointEmbedder, InvertedIndex, ReferenceSet, Retriever};
use crate::rewrite::{self, ClaimDecision, RewriteError, RewriteResult};

pub use config::{EndpointSpec, Mode, PipelineConfig, PromptStyle, RetryConfig};
pub use cost::{account_cost, ComponentTokens, CostLedger, CostWeights};
pub use runner::{run_dataset, ClaimTraceRecord, FailedQuestion, ResultRecord, RewriteTraceRecord, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("mode {0} needs a retrieval index")]
    MissingIndex(&'static str),
    #[error("reader call failed: {0}")]
    Reader(GatewayError),
    #[error(transparent)]
    Data(#[from] crate::domain::DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which part of the system produced an exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Proxy,
    Judge,
    Rewriter,
    Reader,
    /// The reader model asked whether it needs retrieval (self-eval mode).
    SelfEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedExchange {
    pub role: Component,
    pub exchange: ChatExchange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Direct,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub kind: PlanKind,
    pub references: ReferenceSet,
    pub queries_used: Vec<String>,
}

impl GenerationPlan {
    pub fn direct() -> Self {
        Self { kind: PlanKind::Direct, references: ReferenceSet::default(), queries_used: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub question_id: String,
    pub mode: Mode,
    pub heuristic_answer: Option<String>,
    pub verdict: Option<Verdict>,
    pub rewrite_result: Option<RewriteResult>,
    pub claim_decisions: Vec<ClaimDecision>,
    pub surviving_queries: Vec<String>,
    pub plan: GenerationPlan,
    /// Every query actually sent to the retriever, in order.
    pub retrieval_queries: Vec<String>,
    pub final_answer: String,
    pub exchanges: Vec<TaggedExchange>,
    pub warnings: Vec<String>,
}

impl PipelineTrace {
    fn new(question_id: &str, mode: Mode) -> Self {
        Self {
            question_id: question_id.to_owned(),
            mode,
            heuristic_answer: None,
            verdict: None,
            rewrite_result: None,
            claim_decisions: Vec::new(),
            surviving_queries: Vec::new(),
            plan: GenerationPlan::direct(),
            retrieval_queries: Vec::new(),
            final_answer: String::new(),
            exchanges: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn exchanges_for(&self, role: Component) -> impl Iterator<Item = &ChatExchange> {
        self.exchanges.iter().filter(move |e| e.role == role).map(|e| &e.exchange)
    }

    pub fn reader_exchange(&self) -> Option<&ChatExchange> {
        self.exchanges_for(Component::Reader).next()
    }

    fn record(&mut self, role: Component, exchange: ChatExchange) {
        self.exchanges.push(TaggedExchange { role, exchange });
    }
}

/// Picks direct generation or retrieval. Question-level queries come
/// first; if nothing survives, the raw question is the only query.
pub fn route(verdict: &Verdict, surviving_queries: &[String], question_queries: &[String], question: &str) -> GenerationPlan {
    if verdict.known {
        return GenerationPlan::direct();
    }
    let mut queries: Vec<String> = Vec::new();
    for q in question_queries.iter().chain(surviving_queries) {
        if !queries.contains(q) {
            queries.push(q.clone());
        }
    }
    if queries.is_empty() {
        queries.push(question.to_owned());
    }
    GenerationPlan { kind: PlanKind::Augmented, references: ReferenceSet::default(), queries_used: queries }
}

/// Numbered reference block: one `[i] title: text` line per document.
pub fn assemble_context(refs: &ReferenceSet) -> Result<String, PipelineError> {
    if refs.is_empty() {
        return Err(PipelineError::InvalidInput("no references to assemble".into()));
    }
    let flatten = |s: &str| s.replace("\r\n", " ").replace(['\n', '\r'], " ");
    Ok(refs
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| format!("[{}] {}: {}", i + 1, flatten(&e.document.title), flatten(&e.document.text)))
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Answers questions according to a [`PipelineConfig`].
#[derive(Debug, Clone)]
pub struct Engine {
    config: PipelineConfig,
    gateway: Gateway,
    retriever: Option<Retriever>,
}

impl Engine {
    pub fn new(config: PipelineConfig, index: Option<Arc<InvertedIndex>>) -> Result<Self, PipelineError> {
        let gateway = Gateway::new(config.retry.into(), config.per_endpoint_limit);
        Self::with_gateway(config, gateway, index)
    }

    pub fn with_gateway(config: PipelineConfig, gateway: Gateway, index: Option<Arc<InvertedIndex>>) -> Result<Self, PipelineError> {
        config.validate()?;
        if config.mode.may_retrieve() && index.is_none() {
            return Err(PipelineError::MissingIndex(config.mode.as_str()));
        }
        let retriever = index.map(|idx| {
            let embedder = config
                .endpoint(ModelRole::Embedder)
                .map(|ep| Arc::new(EndpointEmbedder::new(gateway.clone(), ep)) as Arc<dyn crate::retrieval::Embedder>);
            Retriever::new(idx, embedder, config.depths)
        });
        Ok(Self { config, gateway, retriever })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn retriever(&self) -> Option<&Retriever> {
        self.retriever.as_ref()
    }

    fn endpoint(&self, role: ModelRole) -> ModelEndpoint {
        self.config.endpoint(role).expect("validated at construction")
    }

    fn params(&self, role: ModelRole) -> ChatParams {
        ChatParams { max_tokens: self.config.max_tokens, ..ChatParams::for_role(role) }
    }

    pub async fn run_question(&self, q: &Question) -> Result<PipelineTrace, PipelineError> {
        if q.text.trim().is_empty() {
            return Err(PipelineError::InvalidInput(format!("question {:?} is empty", q.id)));
        }
        let mut trace = PipelineTrace::new(&q.id, self.config.mode);
        match self.config.mode {
            Mode::Vanilla | Mode::Cot => {}
            Mode::DirectRag => {
                trace.plan = route(&Verdict::retrieve_fallback("direct rag"), &[], &[], &q.text);
            }
            Mode::SelfEval => self.self_eval_step(q, &mut trace).await,
            Mode::Slimplm => self.slim_steps(q, &mut trace).await,
        }
        if trace.plan.kind == PlanKind::Augmented {
            self.retrieve(&mut trace).await;
        }
        self.generate(q, &mut trace).await?;
        Ok(trace)
    }

    async fn self_eval_step(&self, q: &Question, trace: &mut PipelineTrace) {
        let messages = PromptTemplate::SelfEval.render(&Slots::question(&q.text)).expect("question slot");
        let params = ChatParams { temperature: 0.0, ..self.params(ModelRole::Reader) };
        let verdict = match self.gateway.chat(&self.endpoint(ModelRole::Reader), messages, params).await {
            Ok(ex) => {
                let answer = ex.response_text.trim().to_ascii_lowercase();
                let verdict = if answer.starts_with("no") {
                    Verdict { known: true, raw_output: ex.response_text.clone(), fallback_applied: false }
                } else {
                    Verdict { known: false, raw_output: ex.response_text.clone(), fallback_applied: !answer.starts_with("yes") }
                };
                trace.record(Component::SelfEval, ex);
                verdict
            }
            Err(e) => {
                trace.warnings.push(format!("self-eval call failed, retrieving: {e}"));
                Verdict::retrieve_fallback(e.to_string())
            }
        };
        trace.plan = route(&verdict, &[], &[], &q.text);
        trace.verdict = Some(verdict);
    }

    async fn slim_steps(&self, q: &Question, trace: &mut PipelineTrace) {
        let proxy_messages = PromptTemplate::Vanilla.render(&Slots::question(&q.text)).expect("question slot");
        let heuristic = match self.gateway.chat(&self.endpoint(ModelRole::Proxy), proxy_messages, self.params(ModelRole::Proxy)).await {
            Ok(ex) => {
                let text = ex.response_text.clone();
                trace.record(Component::Proxy, ex);
                if text.trim().is_empty() {
                    trace.warnings.push("proxy returned an empty heuristic answer; retrieving with the question".into());
                }
                text
            }
            Err(e) => {
                trace.warnings.push(format!("proxy call failed, retrieving with the question: {e}"));
                String::new()
            }
        };
        if heuristic.trim().is_empty() {
            let verdict = Verdict::retrieve_fallback("no heuristic answer");
            trace.plan = route(&verdict, &[], &[], &q.text);
            trace.verdict = Some(verdict);
            return;
        }
        trace.heuristic_answer = Some(heuristic.clone());

        let judge_ep = self.endpoint(ModelRole::Judge);
        let rewriter_ep = self.endpoint(ModelRole::Rewriter);
        let (judged, rewritten) = tokio::join!(
            judgment::judge(&self.gateway, &judge_ep, &q.text, &heuristic),
            rewrite::rewrite(&self.gateway, &rewriter_ep, &q.text, &heuristic),
        );

        let verdict = match judged {
            Ok((v, ex)) => {
                trace.record(Component::Judge, ex);
                if v.fallback_applied {
                    trace.warnings.push("judge output unparseable; treating as Known(False)".into());
                }
                v
            }
            Err(e) => {
                trace.warnings.push(format!("judge call failed, retrieving: {e}"));
                Verdict::retrieve_fallback(e.to_string())
            }
        };

        let rewrite_result = match rewritten {
            Ok((r, ex)) => {
                trace.record(Component::Rewriter, ex);
                trace.warnings.extend(r.warnings.iter().map(|w| format!("rewrite: {w}")));
                Some(r)
            }
            Err(RewriteError::Parse { raw_output, exchange }) => {
                if let Some(ex) = exchange {
                    trace.record(Component::Rewriter, *ex);
                }
                trace.warnings.push(format!("rewrite output unparseable: {raw_output:?}"));
                None
            }
            Err(e) => {
                trace.warnings.push(format!("rewrite call failed: {e}"));
                None
            }
        };

        if let Some(r) = &rewrite_result {
            let collected: Mutex<Vec<(String, String, ChatExchange)>> = Mutex::new(Vec::new());
            let decisions = rewrite::filter_claim_queries(&r.claim_queries, |query, claim| {
                let ep = judge_ep.clone();
                let collected = &collected;
                async move {
                    let (v, ex) = judgment::judge(&self.gateway, &ep, &query, &claim).await?;
                    collected.lock().expect("exchange list poisoned").push((query, claim, ex));
                    Ok::<_, judgment::JudgmentError>(v)
                }
            })
            .await;
            let mut exchanges = collected.into_inner().expect("exchange list poisoned");
            let position = |query: &str, claim: &str| {
                r.claim_queries.iter().position(|p| p.query == query && p.claim == claim).unwrap_or(usize::MAX)
            };
            exchanges.sort_by_key(|(q, c, _)| position(q, c));
            for (_, _, ex) in exchanges {
                trace.record(Component::Judge, ex);
            }
            for d in decisions.iter().filter(|d| d.error.is_some()) {
                trace.warnings.push(format!("claim judge failed for {:?}; query kept", d.query));
            }
            trace.surviving_queries = rewrite::surviving_queries(&decisions);
            trace.claim_decisions = decisions;
        }

        let question_queries = rewrite_result.as_ref().map(|r| r.question_queries.clone()).unwrap_or_default();
        trace.plan = route(&verdict, &trace.surviving_queries, &question_queries, &q.text);
        trace.verdict = Some(verdict);
        trace.rewrite_result = rewrite_result;
    }

    async fn retrieve(&self, trace: &mut PipelineTrace) {
        let retriever = self.retriever.as_ref().expect("retrieving modes require an index");
        let queries = trace.plan.queries_used.clone();
        trace.retrieval_queries.extend(queries.iter().cloned());
        let results = join_all(queries.iter().map(|q| retriever.retrieve(q))).await;
        let mut per_query = Vec::with_capacity(queries.len());
        for (q, (docs, warning)) in queries.into_iter().zip(results) {
            if let Some(w) = warning {
                trace.warnings.push(format!("retrieval for {q:?}: {w}"));
            }
            per_query.push((q, docs));
        }
        let refs = merge_references(&per_query, self.config.reference_budget);
        if refs.is_empty() {
            trace.warnings.push("retrieval returned no documents; generating without references".into());
            trace.plan.kind = PlanKind::Direct;
        }
        trace.plan.references = refs;
    }

    fn reader_prompt(&self, q: &Question, plan: &GenerationPlan) -> Vec<ChatMessage> {
        let slots = Slots::question(&q.text);
        let rendered = match plan.kind {
            PlanKind::Augmented => {
                let block = assemble_context(&plan.references).expect("augmented plans carry references");
                let template = match self.config.prompt_style {
                    PromptStyle::ShortForm => PromptTemplate::RagShort,
                    PromptStyle::LongForm => PromptTemplate::RagLong,
                };
                template.render(&slots.with_reference(block))
            }
            PlanKind::Direct if self.config.mode == Mode::Cot => PromptTemplate::Cot.render(&slots),
            PlanKind::Direct => PromptTemplate::Vanilla.render(&slots),
        };
        rendered.expect("reader slots supplied")
    }

    async fn generate(&self, q: &Question, trace: &mut PipelineTrace) -> Result<(), PipelineError> {
        let messages = self.reader_prompt(q, &trace.plan);
        let ex = self
            .gateway
            .chat(&self.endpoint(ModelRole::Reader), messages, self.params(ModelRole::Reader))
            .await
            .map_err(PipelineError::Reader)?;
        trace.final_answer = ex.response_text.clone();
        trace.record(Component::Reader, ex);
        Ok(())
    }

    pub fn account(&self, trace: &PipelineTrace) -> CostLedger {
        account_cost(trace, &self.config.cost_weights())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Document;
    use crate::retrieval::{ScoredDocument, Stage};

    fn v(known: bool) -> Verdict {
        Verdict { known, raw_output: String::new(), fallback_applied: false }
    }

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn routing_rules() {
        assert_eq!(route(&v(true), &s(&["a"]), &s(&["b"]), "q").kind, PlanKind::Direct);
        let p = route(&v(false), &[], &[], "the question");
        assert_eq!(p.kind, PlanKind::Augmented);
        assert_eq!(p.queries_used, ["the question"]);
        assert_eq!(route(&v(false), &s(&["s1"]), &s(&["x1"]), "q").queries_used, ["x1", "s1"]);
    }

    fn refs(docs: &[(&str, &str)]) -> ReferenceSet {
        ReferenceSet {
            entries: docs
                .iter()
                .map(|(t, x)| ScoredDocument {
                    document: Document::new(*t, *t, *x),
                    score: 1.0,
                    source_query: "q".into(),
                    stage: Stage::Bm25,
                })
                .collect(),
            per_query_provenance: Vec::new(),
        }
    }

    #[test]
    fn context_numbering() {
        assert_eq!(assemble_context(&refs(&[("A", "one"), ("B", "two")])).unwrap(), "[1] A: one\n[2] B: two");
        assert_eq!(assemble_context(&refs(&[("A", "one")])).unwrap(), "[1] A: one");
        assert_eq!(assemble_context(&refs(&[("A", "l1\nl2\r\nl3")])).unwrap(), "[1] A: l1 l2 l3");
        assert!(assemble_context(&ReferenceSet::default()).is_err());
    }

    #[test]
    fn retrieving_modes_need_an_index() {
        let cfg = PipelineConfig::single_server("http://127.0.0.1:1/v1", Mode::DirectRag);
        assert!(matches!(Engine::new(cfg, None), Err(PipelineError::MissingIndex("direct_rag"))));
        let cfg = PipelineConfig::single_server("http://127.0.0.1:1/v1", Mode::Vanilla);
        assert!(Engine::new(cfg, None).is_ok());
    }
}
