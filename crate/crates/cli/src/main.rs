use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use slim_rag_client::Client;
use slim_rag_core::domain::{load_corpus, load_dataset, read_jsonl, write_jsonl, HeuristicAnswer};
use slim_rag_core::eval::{self, EvalMode, EvalReport, ScoreRecord};
use slim_rag_core::judgment::{collect_labels, LabelConfig, LabelRecord};
use slim_rag_core::mock::{self, MockScript};
use slim_rag_core::pipeline::{run_dataset, Engine, FailedQuestion, Mode, PipelineConfig, RewriteTraceRecord, RunSummary};
use slim_rag_core::retrieval::{Bm25Params, InvertedIndex};
use slim_rag_core::rewrite::{build_annotation_request, AnnotationRequest};

mod report;

#[derive(Debug, Parser)]
#[command(name = "slim-rag", version, about = "Retrieval routing with a small proxy model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a BM25 index from a corpus JSONL file.
    Index(IndexArgs),
    /// Answer every question in a dataset.
    Run(RunArgs),
    /// Judgment-label collection.
    #[command(subcommand)]
    Labels(LabelsCommand),
    /// Annotation request preparation.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    /// Score a results file against gold answers.
    Eval(EvalArgs),
    /// Compare per-question scores of two models across thresholds.
    Gap(GapArgs),
    /// Render eval reports as a comparison table.
    Report(ReportArgs),
    /// Run the scripted mock model server.
    MockLlm(MockArgs),
    /// Serve the engine over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.2)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
}

#[derive(Debug, Args)]
struct EngineArgs {
    /// Engine config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Index built by `index`; required by retrieving modes.
    #[arg(long)]
    corpus_index: Option<PathBuf>,
    /// Overrides the mode in the config file.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Rewrite-trace JSONL output.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Send questions to a running `serve` instance instead of running the engine here.
    #[arg(long, conflicts_with_all = ["config", "corpus_index", "mode", "k1", "b"])]
    server: Option<String>,
    #[arg(long, required_unless_present = "server")]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus_index: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum LabelsCommand {
    /// Label heuristic answers by gold coverage and balance the classes.
    Collect(LabelArgs),
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Heuristic answers JSONL: {"question_id", "text", "completion_tokens"}.
    #[arg(long)]
    answers: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Keep every sample instead of downsampling the majority label.
    #[arg(long)]
    no_balance: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum AnnotateCommand {
    /// Write one claim-annotation prompt per question.
    Prep(PrepArgs),
}

#[derive(Debug, Args)]
struct PrepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    answers: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "short_form")]
    mode: EvalMode,
    #[arg(long)]
    report: PathBuf,
    /// Per-question EM scores JSONL, for `gap`.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GapArgs {
    /// Scores of the larger model.
    #[arg(long)]
    a: PathBuf,
    /// Scores of the smaller model.
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7")]
    thresholds: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Eval report JSON files; the file stem names each row.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MockArgs {
    #[arg(long)]
    script: PathBuf,
    #[arg(long, default_value_t = 8089)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
}

fn build_engine(config: &Path, index: Option<&Path>, mode: Option<Mode>, k1: Option<f64>, b: Option<f64>) -> anyhow::Result<Engine> {
    let mut config = PipelineConfig::load(config)?;
    if let Some(m) = mode {
        config.mode = m;
    }
    let index = match index {
        Some(p) => {
            let idx = InvertedIndex::load(p).with_context(|| format!("loading index {}", p.display()))?;
            let defaults = idx.params();
            let params = Bm25Params { k1: k1.unwrap_or(defaults.k1), b: b.unwrap_or(defaults.b) };
            Some(Arc::new(idx.with_params(params)?))
        }
        None => None,
    };
    Ok(Engine::new(config, index)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn load_pairs(dataset: &Path, answers: &Path) -> anyhow::Result<Vec<(slim_rag_core::Question, HeuristicAnswer)>> {
    let questions = load_dataset(dataset)?;
    let answers: Vec<HeuristicAnswer> = read_jsonl(answers)?;
    let mut by_id: std::collections::HashMap<String, HeuristicAnswer> =
        answers.into_iter().map(|a| (a.question_id.clone(), a)).collect();
    let mut pairs = Vec::with_capacity(questions.len());
    for q in questions {
        match by_id.remove(&q.id) {
            Some(a) => pairs.push((q, a)),
            None => tracing::warn!(id = %q.id, "no heuristic answer; skipped"),
        }
    }
    Ok(pairs)
}

async fn run_remote(server: &str, args: &RunArgs) -> anyhow::Result<RunSummary> {
    let client = Client::new(server)?;
    client.health().await.with_context(|| format!("service at {server} is not reachable"))?;
    let questions = load_dataset(&args.dataset)?;
    let mut results = BufWriter::new(File::create(&args.out)?);
    let mut traces = args.traces.as_ref().map(File::create).transpose()?.map(BufWriter::new);
    let mut summary = RunSummary { total: questions.len(), succeeded: 0, failed: Vec::new() };
    for q in &questions {
        match client.answer(q).await {
            Ok(resp) => {
                writeln!(results, "{}", serde_json::to_string(&resp.result)?)?;
                results.flush()?;
                if let Some(w) = traces.as_mut() {
                    writeln!(w, "{}", serde_json::to_string(&RewriteTraceRecord::from(&resp.trace))?)?;
                    w.flush()?;
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

async fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let summary = match &args.server {
        Some(server) => run_remote(server, &args).await?,
        None => {
            let config = args.config.as_deref().expect("clap requires --config without --server");
            let engine = build_engine(config, args.corpus_index.as_deref(), args.mode, args.k1, args.b)?;
            run_dataset(&engine, &args.dataset, &args.out, args.traces.as_deref()).await?
        }
    };
    eprintln!("answered {}/{} questions", summary.succeeded, summary.total);
    for f in &summary.failed {
        eprintln!("  failed {}: {}", f.id, f.error);
    }
    Ok(if summary.run_failed() { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

async fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Index(a) => {
            let params = Bm25Params { k1: a.k1, b: a.b };
            let index = InvertedIndex::build(load_corpus(&a.corpus)?, params)?;
            index.save(&a.out)?;
            eprintln!("indexed {} documents, {} terms", index.doc_count(), index.term_count());
        }
        Command::Run(a) => return run(a).await,
        Command::Labels(LabelsCommand::Collect(a)) => {
            let pairs = load_pairs(&a.dataset, &a.answers)?;
            let config = LabelConfig { theta: a.theta, seed: a.seed, balance: !a.no_balance };
            let labels = collect_labels(&pairs, &config)?;
            for r in &labels.rejected {
                tracing::warn!(id = %r.question_id, reason = %r.reason, "sample rejected");
            }
            let rows: Vec<LabelRecord> = labels.samples.iter().map(LabelRecord::from).collect();
            write_jsonl(&a.out, &rows)?;
            eprintln!(
                "kept {} known_true, {} known_false; dropped {}; rejected {}",
                labels.kept_count(slim_rag_core::judgment::Label::KnownTrue),
                labels.kept_count(slim_rag_core::judgment::Label::KnownFalse),
                labels.dropped_count(),
                labels.rejected.len()
            );
        }
        Command::Annotate(AnnotateCommand::Prep(a)) => {
            let pairs = load_pairs(&a.dataset, &a.answers)?;
            let mut rows = Vec::with_capacity(pairs.len());
            for (q, h) in &pairs {
                match build_annotation_request(&q.text, &h.text) {
                    Ok(prompt) => rows.push(AnnotationRequest { question_id: q.id.clone(), prompt }),
                    Err(e) => tracing::warn!(id = %q.id, error = %e, "skipped"),
                }
            }
            write_jsonl(&a.out, &rows)?;
        }
        Command::Eval(a) => {
            if a.scores.is_some() && a.mode != EvalMode::ShortForm {
                bail!("--scores needs short_form evaluation");
            }
            let report = eval::evaluate_run(&a.results, &a.dataset, a.mode)?;
            write_json(&a.report, &report)?;
            if let Some(path) = &a.scores {
                let rows: Vec<ScoreRecord> = report
                    .per_question
                    .iter()
                    .map(|s| ScoreRecord { id: s.id.clone(), em: s.em.unwrap_or_default() })
                    .collect();
                write_jsonl(path, &rows)?;
            }
            println!("{}", serde_json::to_string_pretty(&report.metrics)?);
        }
        Command::Gap(a) => {
            let sa: Vec<ScoreRecord> = read_jsonl(&a.a)?;
            let sb: Vec<ScoreRecord> = read_jsonl(&a.b)?;
            emit(a.out.as_deref(), &eval::knowledge_gap_report(&sa, &sb, &a.thresholds)?)?;
        }
        Command::Report(a) => {
            let mut rows = Vec::with_capacity(a.reports.len());
            for p in &a.reports {
                let raw = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let report: EvalReport = serde_json::from_str(&raw).with_context(|| format!("parsing {}", p.display()))?;
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                rows.push((name, report));
            }
            let table = report::render(&rows);
            match &a.out {
                Some(p) => std::fs::write(p, table)?,
                None => print!("{table}"),
            }
        }
        Command::MockLlm(a) => {
            let script = MockScript::load(&a.script)?;
            mock::serve(script, &format!("{}:{}", a.host, a.port)).await?;
        }
        Command::Serve(a) => {
            let e = &a.engine;
            let engine = build_engine(&e.config, e.corpus_index.as_deref(), e.mode, e.k1, e.b)?;
            slim_rag_service::serve(engine, &a.addr).await?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
