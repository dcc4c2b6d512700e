//! Retrieval-necessity judgment and training-label collection.
//!
//! A verdict says whether the reader already knows enough to answer. Any
//! uncertainty resolves to `known = false`, i.e. retrieve.

use std::sync::LazyLock;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{HeuristicAnswer, Question};
use crate::gateway::{ChatExchange, ChatParams, Gateway, GatewayError, ModelEndpoint, ModelRole, PromptTemplate, Slots};
use crate::text::{matching_ratio, MatchError};

#[derive(Debug, thiserror::Error)]
pub enum JudgmentError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub known: bool,
    pub raw_output: String,
    pub fallback_applied: bool,
}

impl Verdict {
    /// Verdict used when the judge could not be consulted at all.
    pub fn retrieve_fallback(reason: impl Into<String>) -> Self {
        Self { known: false, raw_output: reason.into(), fallback_applied: true }
    }
}

static VERDICT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)known\s*\(\s*(true|false)\s*\)").expect("static regex"));

/// Reads the first `Known (True)` / `Known (False)` marker in model output.
pub fn parse_verdict(raw: &str) -> Verdict {
    match VERDICT_RE.captures(raw) {
        Some(caps) => Verdict {
            known: caps[1].eq_ignore_ascii_case("true"),
            raw_output: raw.to_owned(),
            fallback_applied: false,
        },
        None => Verdict { known: false, raw_output: raw.to_owned(), fallback_applied: true },
    }
}

/// Asks the judge model whether `heuristic_answer` shows the question is
/// already answerable. The exchange is returned for cost accounting.
pub async fn judge(
    gateway: &Gateway,
    endpoint: &ModelEndpoint,
    question: &str,
    heuristic_answer: &str,
) -> Result<(Verdict, ChatExchange), JudgmentError> {
    if question.trim().is_empty() {
        return Err(JudgmentError::InvalidInput("question is empty".into()));
    }
    if heuristic_answer.trim().is_empty() {
        return Err(JudgmentError::InvalidInput("heuristic answer is empty".into()));
    }
    let messages = PromptTemplate::Judgment
        .render(&Slots::question(question).with_heuristic_answer(heuristic_answer))
        .expect("both judgment slots supplied");
    let params = ChatParams { temperature: 0.0, ..ChatParams::for_role(ModelRole::Judge) };
    let exchange = gateway.chat(endpoint, messages, params).await?;
    Ok((parse_verdict(&exchange.response_text), exchange))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    KnownTrue,
    KnownFalse,
}

/// `KnownTrue` iff `ratio > theta`.
pub fn label_from_ratio(ratio: f64, theta: f64) -> Result<Label, JudgmentError> {
    for (name, v) in [("ratio", ratio), ("theta", theta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(JudgmentError::InvalidInput(format!("{name} {v} outside [0,1]")));
        }
    }
    Ok(if ratio > theta { Label::KnownTrue } else { Label::KnownFalse })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub theta: f64,
    pub seed: u64,
    pub balance: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { theta: 0.5, seed: 7, balance: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub question: Question,
    pub heuristic_answer: HeuristicAnswer,
    pub ratio: f64,
    pub label: Label,
    pub kept: bool,
}

/// JSONL row for one labeled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub question_id: String,
    pub ratio: f64,
    pub label: Label,
    pub kept: bool,
}

impl From<&LabeledSample> for LabelRecord {
    fn from(s: &LabeledSample) -> Self {
        Self { question_id: s.question.id.clone(), ratio: s.ratio, label: s.label, kept: s.kept }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedSample {
    pub question_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelRun {
    pub samples: Vec<LabeledSample>,
    pub rejected: Vec<RejectedSample>,
}

impl LabelRun {
    pub fn kept_count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.kept && s.label == label).count()
    }

    pub fn dropped_count(&self) -> usize {
        self.samples.iter().filter(|s| !s.kept).count()
    }
}

/// Labels each (question, heuristic answer) pair by its matching ratio and,
/// when `config.balance` is set, drops a seeded uniform sample of the
/// majority class until both classes are the same size.
pub fn collect_labels(samples: &[(Question, HeuristicAnswer)], config: &LabelConfig) -> Result<LabelRun, JudgmentError> {
    if !(0.0..=1.0).contains(&config.theta) {
        return Err(JudgmentError::InvalidInput(format!("theta {} outside [0,1]", config.theta)));
    }
    let mut run = LabelRun::default();
    for (q, a) in samples {
        if q.gold_short_answers.is_empty() {
            run.rejected.push(RejectedSample { question_id: q.id.clone(), reason: "no short answers".into() });
            continue;
        }
        if a.question_id != q.id {
            run.rejected.push(RejectedSample {
                question_id: q.id.clone(),
                reason: format!("heuristic answer belongs to {:?}", a.question_id),
            });
            continue;
        }
        let ratio = match matching_ratio(&a.text, &q.gold_short_answers) {
            Ok(r) => r,
            Err(e) => {
                run.rejected.push(RejectedSample { question_id: q.id.clone(), reason: e.to_string() });
                continue;
            }
        };
        run.samples.push(LabeledSample {
            question: q.clone(),
            heuristic_answer: a.clone(),
            ratio,
            label: label_from_ratio(ratio, config.theta)?,
            kept: true,
        });
    }

    if config.balance {
        let (known, unknown): (Vec<usize>, Vec<usize>) =
            (0..run.samples.len()).partition(|&i| run.samples[i].label == Label::KnownTrue);
        let (majority, minority) = if known.len() > unknown.len() { (known, unknown) } else { (unknown, known) };
        if majority.len() > minority.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut keep = vec![false; majority.len()];
            for i in index::sample(&mut rng, majority.len(), minority.len()) {
                keep[i] = true;
            }
            for (slot, &sample_idx) in majority.iter().enumerate() {
                run.samples[sample_idx].kept = keep[slot];
            }
        }
    }
    Ok(run)
}
