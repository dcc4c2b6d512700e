use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use super::{CostLedger, Engine, PipelineError, PipelineTrace, PlanKind};
use crate::domain::load_dataset;

/// One line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub id: String,
    pub answer: String,
    pub plan_kind: PlanKind,
    pub queries: Vec<String>,
    pub cost: CostLedger,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ResultRecord {
    pub fn from_trace(trace: &PipelineTrace, cost: CostLedger) -> Self {
        Self {
            id: trace.question_id.clone(),
            answer: trace.final_answer.clone(),
            plan_kind: trace.plan.kind,
            queries: trace.retrieval_queries.clone(),
            cost,
            warnings: trace.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimTraceRecord {
    pub claim: String,
    pub query: String,
    pub kept: bool,
}

/// One line of the rewrite-trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteTraceRecord {
    pub question_id: String,
    pub question_queries: Vec<String>,
    pub claims: Vec<ClaimTraceRecord>,
}

impl From<&PipelineTrace> for RewriteTraceRecord {
    fn from(t: &PipelineTrace) -> Self {
        Self {
            question_id: t.question_id.clone(),
            question_queries: t.rewrite_result.as_ref().map(|r| r.question_queries.clone()).unwrap_or_default(),
            claims: t
                .claim_decisions
                .iter()
                .map(|d| ClaimTraceRecord { claim: d.claim.clone(), query: d.query.clone(), kept: d.kept })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedQuestion {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub total: usize,
    pub succeeded: usize,
    pub failed: Vec<FailedQuestion>,
}

impl RunSummary {
    /// More than half the questions failed.
    pub fn run_failed(&self) -> bool {
        self.failed.len() * 2 > self.total
    }
}

fn write_line<W: Write, T: Serialize>(w: &mut W, row: &T) -> Result<(), PipelineError> {
    let mut line = serde_json::to_string(row).map_err(std::io::Error::other)?;
    line.push('\n');
    w.write_all(line.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Answers every question in the dataset, writing one result line per
/// successful question in input order. Lines are flushed one at a time so
/// an interrupted run leaves valid JSONL behind.
pub async fn run_dataset(
    engine: &Engine,
    dataset: impl AsRef<Path>,
    out: impl AsRef<Path>,
    rewrite_traces: Option<&Path>,
) -> Result<RunSummary, PipelineError> {
    let questions = load_dataset(dataset)?;
    let mut results = BufWriter::new(File::create(out)?);
    let mut traces = match rewrite_traces {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };

    let total = questions.len();
    let mut summary = RunSummary { total, succeeded: 0, failed: Vec::new() };
    let mut outcomes = stream::iter(questions.iter())
        .map(|q| async move { (q, engine.run_question(q).await) })
        .buffered(engine.config().concurrency.max(1));

    while let Some((q, outcome)) = outcomes.next().await {
        match outcome {
            Ok(trace) => {
                let record = ResultRecord::from_trace(&trace, engine.account(&trace));
                write_line(&mut results, &record)?;
                if let Some(w) = traces.as_mut() {
                    write_line(w, &RewriteTraceRecord::from(&trace))?;
                }
                summary.succeeded += 1;
            }
            Err(e) => {
                tracing::warn!(id = %q.id, error = %e, "question failed");
                summary.failed.push(FailedQuestion { id: q.id.clone(), error: e.to_string() });
            }
        }
    }
    Ok(summary)
}
