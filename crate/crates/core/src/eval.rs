//! Answer-quality metrics, run reports and proxy/reader overlap analysis.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{load_dataset, read_jsonl, DataError, Question};
use crate::pipeline::{ComponentTokens, ResultRecord};
use crate::text::{matching_ratio, strict_match, tokenize, MatchError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("results reference ids missing from the dataset: {0:?}")]
    UnmatchedIds(Vec<String>),
    #[error("question {0:?} has no long-form reference answer")]
    MissingLongAnswer(String),
    #[error("id sets differ between score lists: {0:?}")]
    IdMismatch(Vec<String>),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, pred_total: usize, ref_total: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(overlap, pred_total);
        let recall = ratio(overlap, ref_total);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1 }
    }
}

/// Fraction of distinct gold answers contained in the prediction.
pub fn em_coverage<S: AsRef<str>>(pred: &str, golds: &[S]) -> Result<f64, EvalError> {
    Ok(matching_ratio(pred, golds)?)
}

pub fn strict_em<S: AsRef<str>>(pred: &str, golds: &[S]) -> Result<bool, EvalError> {
    Ok(strict_match(pred, golds)?)
}

/// At least one gold answer is contained in the prediction.
pub fn hit_at_1<S: AsRef<str>>(pred: &str, golds: &[S]) -> Result<bool, EvalError> {
    Ok(em_coverage(pred, golds)? > 0.0)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N over normalized tokens, with clipped n-gram overlap.
pub fn rouge_n(pred: &str, reference: &str, n: usize) -> Result<RougeScore, EvalError> {
    if n == 0 {
        return Err(EvalError::InvalidInput("rouge n must be at least 1".into()));
    }
    let p = tokenize(pred);
    let r = tokenize(reference);
    let pc = ngram_counts(&p, n);
    let rc = ngram_counts(&r, n);
    let overlap: usize = pc.iter().map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0))).sum();
    Ok(RougeScore::from_counts(overlap, pc.values().sum(), rc.values().sum()))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L from the token-level longest common subsequence.
pub fn rouge_l(pred: &str, reference: &str) -> RougeScore {
    let p = tokenize(pred);
    let r = tokenize(reference);
    RougeScore::from_counts(lcs_len(&p, &r), p.len(), r.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    ShortForm,
    LongForm,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "short_form" => Ok(Self::ShortForm),
            "long_form" => Ok(Self::LongForm),
            other => Err(format!("unknown eval mode {other:?}; expected short_form or long_form")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuestionScore {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict_em: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit_at_1: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge2: Option<f64>,
    #[serde(default, rename = "rougeL", skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strict_em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hit_at_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge2: Option<f64>,
    #[serde(rename = "rougeL", skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
}

/// Per-question average token usage, laid out like a cost table: reader
/// tokens, each auxiliary component, and their raw sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostTable {
    pub chat: f64,
    pub proxy: f64,
    pub rewrite: f64,
    pub judge: f64,
    pub self_eval: f64,
    pub total: f64,
    pub weighted_extra_cost: f64,
    pub extra_cost_ratio: f64,
}

impl CostTable {
    pub fn from_tokens(tokens: &ComponentTokens, weighted_extra_cost: f64) -> Self {
        Self {
            chat: tokens.reader,
            proxy: tokens.proxy,
            rewrite: tokens.rewriter,
            judge: tokens.judge,
            self_eval: tokens.self_eval,
            total: tokens.extra_total(),
            weighted_extra_cost,
            extra_cost_ratio: if tokens.reader > 0.0 { weighted_extra_cost / tokens.reader } else { 0.0 },
        }
    }

    /// Unweighted auxiliary tokens as a fraction of reader tokens.
    pub fn raw_extra_ratio(&self) -> f64 {
        if self.chat > 0.0 {
            self.total / self.chat
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub samples: usize,
    pub metrics: Aggregates,
    pub cost: CostTable,
    pub per_question: Vec<QuestionScore>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn score_question(q: &Question, answer: &str, mode: EvalMode) -> Result<QuestionScore, EvalError> {
    let mut s = QuestionScore { id: q.id.clone(), ..QuestionScore::default() };
    match mode {
        EvalMode::ShortForm => {
            if q.gold_short_answers.is_empty() {
                return Err(EvalError::InvalidInput(format!("question {:?} has no short answers", q.id)));
            }
            let em = em_coverage(answer, &q.gold_short_answers)?;
            s.em = Some(em);
            s.hit_at_1 = Some(em > 0.0);
            s.strict_em = Some(strict_em(answer, &q.gold_short_answers)?);
        }
        EvalMode::LongForm => {
            let gold = q.gold_long_answer.as_deref().ok_or_else(|| EvalError::MissingLongAnswer(q.id.clone()))?;
            s.rouge1 = Some(rouge_n(answer, gold, 1)?.f1);
            s.rouge2 = Some(rouge_n(answer, gold, 2)?.f1);
            s.rouge_l = Some(rouge_l(answer, gold).f1);
        }
    }
    Ok(s)
}

/// Scores results against gold answers and averages cost.
pub fn evaluate_records(results: &[ResultRecord], dataset: &[Question], mode: EvalMode) -> Result<EvalReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::InvalidInput("no results to evaluate".into()));
    }
    let by_id: HashMap<&str, &Question> = dataset.iter().map(|q| (q.id.as_str(), q)).collect();
    let unmatched: Vec<String> = results.iter().filter(|r| !by_id.contains_key(r.id.as_str())).map(|r| r.id.clone()).collect();
    if !unmatched.is_empty() {
        return Err(EvalError::UnmatchedIds(unmatched));
    }
    if mode == EvalMode::LongForm {
        if let Some(q) = dataset.iter().find(|q| q.gold_long_answer.is_none()) {
            return Err(EvalError::MissingLongAnswer(q.id.clone()));
        }
    }
    let per_question = results
        .iter()
        .map(|r| score_question(by_id[r.id.as_str()], &r.answer, mode))
        .collect::<Result<Vec<_>, _>>()?;

    let metrics = Aggregates {
        em: mean(per_question.iter().filter_map(|s| s.em)),
        strict_em: mean(per_question.iter().filter_map(|s| s.strict_em.map(f64::from))),
        hit_at_1: mean(per_question.iter().filter_map(|s| s.hit_at_1.map(f64::from))),
        rouge1: mean(per_question.iter().filter_map(|s| s.rouge1)),
        rouge2: mean(per_question.iter().filter_map(|s| s.rouge2)),
        rouge_l: mean(per_question.iter().filter_map(|s| s.rouge_l)),
    };

    let n = results.len() as f64;
    let mut tokens = ComponentTokens::default();
    let mut weighted = 0.0;
    for r in results {
        let t = &r.cost.tokens;
        tokens.reader += t.reader / n;
        tokens.proxy += t.proxy / n;
        tokens.rewriter += t.rewriter / n;
        tokens.judge += t.judge / n;
        tokens.self_eval += t.self_eval / n;
        weighted += r.cost.weighted_extra_cost / n;
    }
    Ok(EvalReport { mode, samples: results.len(), metrics, cost: CostTable::from_tokens(&tokens, weighted), per_question })
}

pub fn evaluate_run(results: impl AsRef<Path>, dataset: impl AsRef<Path>, mode: EvalMode) -> Result<EvalReport, EvalError> {
    let records: Vec<ResultRecord> = read_jsonl(results)?;
    let questions = load_dataset(dataset)?;
    evaluate_records(&records, &questions, mode)
}

/// JSONL row of a per-question EM score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub em: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub threshold: f64,
    pub proportion_a: f64,
    pub proportion_b: f64,
    /// Share of B's above-threshold questions that A also has above the
    /// threshold; `None` when B has none.
    pub overlap: Option<f64>,
}

/// For each threshold `t`: the share of questions each model scores above
/// `t`, and how many of the smaller model's (B) above-`t` questions the
/// larger model (A) also clears.
pub fn knowledge_gap_report(a: &[ScoreRecord], b: &[ScoreRecord], thresholds: &[f64]) -> Result<Vec<GapRow>, EvalError> {
    let index = |rows: &[ScoreRecord]| -> Result<HashMap<String, f64>, EvalError> {
        let mut m = HashMap::new();
        for r in rows {
            if m.insert(r.id.clone(), r.em).is_some() {
                return Err(EvalError::InvalidInput(format!("duplicate id {:?}", r.id)));
            }
        }
        Ok(m)
    };
    let ma = index(a)?;
    let mb = index(b)?;
    let ids_a: BTreeSet<&String> = ma.keys().collect();
    let ids_b: BTreeSet<&String> = mb.keys().collect();
    let diff: Vec<String> = ids_a.symmetric_difference(&ids_b).map(|s| (*s).clone()).collect();
    if !diff.is_empty() {
        return Err(EvalError::IdMismatch(diff));
    }
    if ma.is_empty() {
        return Err(EvalError::InvalidInput("score lists are empty".into()));
    }
    let n = ma.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let above_a: BTreeSet<&String> = ma.iter().filter(|(_, v)| **v > t).map(|(k, _)| k).collect();
            let above_b: BTreeSet<&String> = mb.iter().filter(|(_, v)| **v > t).map(|(k, _)| k).collect();
            let both = above_a.intersection(&above_b).count();
            GapRow {
                threshold: t,
                proportion_a: above_a.len() as f64 / n,
                proportion_b: above_b.len() as f64 / n,
                overlap: (!above_b.is_empty()).then(|| both as f64 / above_b.len() as f64),
            }
        })
        .collect())
}
