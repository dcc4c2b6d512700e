//! End-to-end acceptance checks. Runs without the libtest harness so that
//! each criterion prints exactly one PASS/FAIL line.

use std::collections::BTreeSet;
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use slim_rag_core::domain::{Document, HeuristicAnswer, Question};
use slim_rag_core::eval::{self, CostTable, ScoreRecord};
use slim_rag_core::gateway::{PromptTemplate, Slots};
use slim_rag_core::judgment::{collect_labels, Label, LabelConfig};
use slim_rag_core::mock::{MockScript, MockServer};
use slim_rag_core::pipeline::{
    Component, ComponentTokens, CostLedger, CostWeights, Engine, Mode, PipelineConfig, PipelineTrace, PlanKind,
};
use slim_rag_core::retrieval::{Bm25Params, InvertedIndex};
use slim_rag_core::rewrite::{format_rewrite_output, parse_annotation_output, parse_rewrite_output, ClaimQuery};
use slim_rag_core::text::{matching_ratio, normalize_text, tokenize};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime")
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

// ---------------------------------------------------------------- oracles

fn oracle_rouge_n(pred: &str, reference: &str, n: usize) -> (f64, f64, f64) {
    let grams = |s: &str| -> Vec<Vec<String>> {
        let t = tokenize(s);
        if t.len() < n {
            return Vec::new();
        }
        (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
    };
    let p = grams(pred);
    let mut pool = grams(reference);
    let ref_total = pool.len();
    let mut overlap = 0usize;
    for g in &p {
        if let Some(i) = pool.iter().position(|x| x == g) {
            pool.swap_remove(i);
            overlap += 1;
        }
    }
    prf(overlap, p.len(), ref_total)
}

fn oracle_rouge_l(pred: &str, reference: &str) -> (f64, f64, f64) {
    let a = tokenize(pred);
    let b = tokenize(reference);
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    prf(t[a.len()][b.len()], a.len(), b.len())
}

fn prf(overlap: usize, np: usize, nr: usize) -> (f64, f64, f64) {
    let p = if np == 0 { 0.0 } else { overlap as f64 / np as f64 };
    let r = if nr == 0 { 0.0 } else { overlap as f64 / nr as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Slides every gold's token sequence over the prediction's tokens.
fn oracle_matching_ratio(pred: &str, golds: &[String]) -> f64 {
    let pt = tokenize(pred);
    let distinct: BTreeSet<Vec<String>> = golds.iter().map(|g| tokenize(g)).filter(|t| !t.is_empty()).collect();
    let hits = distinct.iter().filter(|g| g.len() <= pt.len() && pt.windows(g.len()).any(|w| w == g.as_slice())).count();
    hits as f64 / distinct.len() as f64
}

/// Direct evaluation of the BM25 sum for every document.
fn oracle_bm25(docs: &[Document], query: &str, k1: f64, b: f64) -> Vec<(usize, f64)> {
    let toks: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.text)).collect();
    let n = docs.len() as f64;
    let avgdl = toks.iter().map(|t| t.len() as f64).sum::<f64>() / n;
    let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
    let mut out = Vec::new();
    for (i, t) in toks.iter().enumerate() {
        let dl = t.len() as f64;
        let mut score = 0.0;
        for term in &terms {
            let tf = t.iter().filter(|x| *x == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = toks.iter().filter(|d| d.contains(term)).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        if score > 0.0 {
            out.push((i, score));
        }
    }
    out.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    out
}

const WORDS: &[&str] = &[
    "the", "cat", "sat", "on", "mat", "Paris", "river", "blue", "a", "of", "Nile", "sea", "x", "A.", "(b)", "run,", "Run",
];

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- criteria

fn metric_oracles() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let p = random_text(&mut rng, 20);
        let r = random_text(&mut rng, 20);
        for n in 1..=2 {
            let got = eval::rouge_n(&p, &r, n).map_err(|e| e.to_string())?;
            let want = oracle_rouge_n(&p, &r, n);
            for d in [got.precision - want.0, got.recall - want.1, got.f1 - want.2] {
                worst = worst.max(d.abs());
            }
        }
        let got = eval::rouge_l(&p, &r);
        let want = oracle_rouge_l(&p, &r);
        for d in [got.precision - want.0, got.recall - want.1, got.f1 - want.2] {
            worst = worst.max(d.abs());
        }
    }
    ensure!(worst <= 1e-9, "rouge differs from oracle by {worst}");

    for case in 0..500 {
        let pred = random_text(&mut rng, 15);
        let golds: Vec<String> = (0..rng.random_range(1..4)).map(|_| {
            let mut g = random_text(&mut rng, 3);
            if normalize_text(&g).is_empty() {
                g = "cat".into();
            }
            g
        }).collect();
        let got = matching_ratio(&pred, &golds).map_err(|e| e.to_string())?;
        let want = oracle_matching_ratio(&pred, &golds);
        ensure!(got == want, "case {case}: matching_ratio({pred:?}, {golds:?}) = {got}, oracle {want}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("600 rouge comparisons max |d|={worst:.1e}, 500 matching_ratio cases, {elapsed:.2?}"))
}

fn bm25_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vocab = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu"];
    let mut docs: Vec<Document> = (0..17)
        .map(|i| {
            let len = rng.random_range(1..15);
            let text = (0..len).map(|_| *vocab.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
            Document::new(format!("d{i:02}"), format!("t{i}"), text)
        })
        .collect();
    // identical texts force exact score ties
    for i in 0..3 {
        let text = docs[i].text.clone();
        docs.push(Document::new(format!("dup{i}"), "dup", text));
    }
    let params = Bm25Params::default();
    let index = InvertedIndex::build(docs.clone(), params).map_err(|e| e.to_string())?;
    let mut tie_queries = 0;
    let mut worst = 0.0f64;
    for qi in 0..50 {
        let len = rng.random_range(1..5);
        let query = (0..len).map(|_| *vocab.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
        let got = index.search(&query, docs.len());
        let want = oracle_bm25(&docs, &query, params.k1, params.b);
        let got_ids: Vec<&str> = got.iter().map(|d| d.document.doc_id.as_str()).collect();
        let want_ids: Vec<&str> = want.iter().map(|(i, _)| docs[*i].doc_id.as_str()).collect();
        ensure!(got_ids == want_ids, "query {qi} {query:?}: ranking {got_ids:?} vs oracle {want_ids:?}");
        for (g, (_, w)) in got.iter().zip(&want) {
            worst = worst.max((g.score - w).abs());
        }
        if want.windows(2).any(|w| w[0].1 == w[1].1) {
            tie_queries += 1;
        }
    }
    ensure!(worst <= 1e-9, "score differs by {worst}");
    ensure!(tie_queries > 0, "no query exercised the tie-break");
    Ok(format!("20 docs, 50 queries, max |d|={worst:.1e}, {tie_queries} queries with ties"))
}

fn label_balance() -> Result<String, String> {
    let samples: Vec<(Question, HeuristicAnswer)> = (0..1000)
        .map(|i| {
            let id = format!("s{i:04}");
            let q = Question::new(&id, format!("question {i}")).with_short_answers(["gold answer"]);
            let text = if i % 5 == 0 { "something else" } else { "it is the gold answer" };
            (q, HeuristicAnswer { question_id: id, text: text.into(), completion_tokens: 4 })
        })
        .collect();
    let config = LabelConfig { theta: 0.5, seed: 7, balance: true };
    let a = collect_labels(&samples, &config).map_err(|e| e.to_string())?;
    let b = collect_labels(&samples, &config).map_err(|e| e.to_string())?;
    let (t, f) = (a.kept_count(Label::KnownTrue), a.kept_count(Label::KnownFalse));
    ensure!(t.abs_diff(f) <= 1, "kept {t}/{f}");
    ensure!(t == 200 && f == 200, "expected 200/200, got {t}/{f}");
    ensure!(a.dropped_count() == 600, "dropped {}", a.dropped_count());
    let kept = |run: &slim_rag_core::judgment::LabelRun| -> Vec<String> {
        run.samples.iter().filter(|s| s.kept).map(|s| s.question.id.clone()).collect()
    };
    ensure!(kept(&a) == kept(&b), "two runs with the same seed differ");
    Ok(format!("known_true {t}, known_false {f}, dropped {}, deterministic", a.dropped_count()))
}

fn small_index() -> Arc<InvertedIndex> {
    let docs = [
        ("d1", "Tower", "The tower was designed by an engineer in Paris."),
        ("d2", "River", "The river flows into the sea near the delta."),
        ("d3", "Composer", "The composer was born in a small alpine town."),
        ("d4", "Museum", "The museum holds a famous painting."),
    ];
    Arc::new(
        InvertedIndex::build(docs.iter().map(|(i, t, x)| Document::new(*i, *t, *x)), Bm25Params::default()).unwrap(),
    )
}

async fn trace_for(script: MockScript, question: &str) -> PipelineTrace {
    let mock = MockServer::start(script, "127.0.0.1:0").await.unwrap();
    let mut config = PipelineConfig::single_server(&mock.base_url(), Mode::Slimplm);
    config.retry.initial_backoff_ms = 5;
    let engine = Engine::new(config, Some(small_index())).unwrap();
    engine.run_question(&Question::new("q", question)).await.unwrap()
}

fn routing_traces() -> Result<String, String> {
    runtime().block_on(async {
        let q = "Who designed the tower?";

        // Known(True): direct, no retrieval, vanilla reader prompt
        let script = MockScript::default()
            .rule(format!("Question: {q}\nRetrieval Necessity"), "Known (True)")
            .rule("Retrieval Necessity", "Known (False)")
            .rule("Query Rewrite Output:", "<Query> tower designer <Claim> An engineer designed it. <Query> tower engineer")
            .with_default("An engineer.");
        let t = trace_for(script, q).await;
        ensure!(t.plan.kind == PlanKind::Direct, "Known(True) gave {:?}", t.plan.kind);
        ensure!(t.retrieval_queries.is_empty(), "Known(True) retrieved {:?}", t.retrieval_queries);
        let reader = t.reader_exchange().ok_or("no reader exchange")?;
        let vanilla = PromptTemplate::Vanilla.render(&Slots::question(q)).unwrap();
        ensure!(reader.messages == vanilla, "direct reader prompt is not the vanilla rendering");
        ensure!(!reader.prompt_text().contains("Reference"), "reference text leaked");

        // Known(False) with claim verdicts [T, F, T]
        let script = MockScript::default()
            .rule(format!("Question: {q}\nRetrieval Necessity"), "Known (False)")
            .rule("Question: claim query one\nRetrieval Necessity", "Known (True)")
            .rule("Question: claim query two\nRetrieval Necessity", "Known (False)")
            .rule("Question: claim query three\nRetrieval Necessity", "Known (True)")
            .rule(
                "Query Rewrite Output:",
                "<Query> tower designer <Claim> first claim <Query> claim query one <Claim> second claim <Query> claim query two <Claim> third claim <Query> claim query three",
            )
            .with_default("The tower was designed by an engineer.");
        let t = trace_for(script, q).await;
        let kept: Vec<bool> = t.claim_decisions.iter().map(|d| d.kept).collect();
        ensure!(kept == [false, true, false], "claim decisions {kept:?}");
        ensure!(t.plan.kind == PlanKind::Augmented, "[T,F,T] gave {:?}", t.plan.kind);
        ensure!(
            t.retrieval_queries == ["tower designer", "claim query two"],
            "[T,F,T] retrieved {:?}",
            t.retrieval_queries
        );
        let judge_calls = t.exchanges_for(Component::Judge).count();
        ensure!(judge_calls == 4, "expected 1 + 3 judge calls, got {judge_calls}");

        // Known(False), nothing survives, no question-level query
        let script = MockScript::default()
            .rule(format!("Question: {q}\nRetrieval Necessity"), "Known (False)")
            .rule("Retrieval Necessity", "Known (True)")
            .rule("Query Rewrite Output:", "<Claim> only claim <Query> only query")
            .with_default("The tower was designed by an engineer.");
        let t = trace_for(script, q).await;
        ensure!(t.surviving_queries.is_empty(), "survivors {:?}", t.surviving_queries);
        ensure!(t.retrieval_queries == [q], "zero-survivor case retrieved {:?}", t.retrieval_queries);
        ensure!(t.plan.kind == PlanKind::Augmented, "zero-survivor plan {:?}", t.plan.kind);
        Ok("direct / [T,F,T] / zero-survivor traces as expected".to_owned())
    })
}

fn single_reader_call() -> Result<String, String> {
    runtime().block_on(async {
        let script = MockScript::default()
            .rule("even\nRetrieval Necessity", "Known (True)")
            .rule("Retrieval Necessity", "Known (False)")
            .rule("Query Rewrite Output:", "<Query> tower <Claim> a claim <Query> river sea")
            .rule("Need retrieval:", "No")
            .with_default("some answer");
        let mock = MockServer::start(script, "127.0.0.1:0").await.unwrap();
        let questions: Vec<Question> = (0..50)
            .map(|i| Question::new(format!("q{i}"), format!("question {i} {}", if i % 2 == 0 { "even" } else { "odd" })))
            .collect();
        let mut lines = Vec::new();
        for mode in Mode::ALL {
            let engine = Engine::new(PipelineConfig::single_server(&mock.base_url(), mode), Some(small_index()))
                .map_err(|e| e.to_string())?;
            let traces = run_all(&engine, &questions).await?;
            for t in &traces {
                let n = t.exchanges_for(Component::Reader).count();
                ensure!(n == 1, "mode {} question {}: {n} reader exchanges", mode.as_str(), t.question_id);
            }
            let augmented = traces.iter().filter(|t| t.plan.kind == PlanKind::Augmented).count();
            lines.push(format!("{}:{augmented}aug", mode.as_str()));
        }
        Ok(format!("50 questions x {} modes, one reader call each ({})", Mode::ALL.len(), lines.join(" ")))
    })
}

async fn run_all(engine: &Engine, questions: &[Question]) -> Result<Vec<PipelineTrace>, String> {
    let mut out = Vec::with_capacity(questions.len());
    for q in questions {
        out.push(engine.run_question(q).await.map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn cost_arithmetic() -> Result<String, String> {
    let t = ComponentTokens { reader: 200.0, proxy: 24.0, rewriter: 35.0, judge: 3.0, self_eval: 0.0 };
    let l = CostLedger::from_tokens(t, &CostWeights::uniform(0.1));
    ensure!((l.weighted_extra_cost - 6.2).abs() < 1e-9, "weighted {}", l.weighted_extra_cost);
    ensure!((l.extra_cost_ratio - 0.031).abs() < 1e-12, "ratio {}", l.extra_cost_ratio);

    // per-question ASQA token averages, unit weights
    let asqa = ComponentTokens { reader: 192.86, proxy: 24.42, rewriter: 35.27, judge: 3.38, self_eval: 0.0 };
    let ledger = CostLedger::from_tokens(asqa, &CostWeights::default());
    let table = CostTable::from_tokens(&asqa, ledger.weighted_extra_cost);
    ensure!((table.total - 63.07).abs() <= 0.01, "total {}", table.total);
    let ratio = table.raw_extra_ratio();
    ensure!((0.25..=1.0 / 3.0).contains(&ratio), "extra/reader {ratio} outside [1/4, 1/3]");
    ensure!((ledger.extra_cost_ratio - ratio).abs() < 1e-12, "ledger and table disagree");
    Ok(format!("6.2 / 0.031; ASQA total {:.2}, extra/reader {ratio:.3}", table.total))
}

fn parser_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let plain = ["when", "was", "the", "tower", "built", "1889", "Paris", "river?", "it's", "x-ray", "(a)", "b,c"];
    let phrase = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.random_range(1..6);
        (0..n).map(|_| *plain.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    for case in 0..1000 {
        let qq: Vec<String> = (0..rng.random_range(0..3)).map(|_| phrase(&mut rng)).collect();
        let claims: Vec<ClaimQuery> =
            (0..rng.random_range(0..5)).map(|_| ClaimQuery::new(phrase(&mut rng), phrase(&mut rng))).collect();
        if qq.is_empty() && claims.is_empty() {
            continue;
        }
        let raw = format_rewrite_output(&qq, &claims);
        let parsed = parse_rewrite_output(&raw).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(parsed.question_queries == qq, "case {case}: question queries {:?} vs {qq:?}", parsed.question_queries);
        ensure!(parsed.claim_queries == claims, "case {case}: claims differ for {raw:?}");
    }
    let ann = parse_annotation_output("<Claim(A (b))> <Search(True)> <Query(what is (b)?)>").map_err(|e| e.to_string())?;
    ensure!(ann.len() == 1, "annotation gave {} claims", ann.len());
    ensure!(ann[0].claim == "A (b)" && ann[0].query == "what is (b)?", "annotation parsed {:?}", ann[0]);
    ensure!(ann[0].needs_search == Some(true), "search flag {:?}", ann[0].needs_search);
    Ok("1000 rewrite lists round-trip; balanced-paren annotation parsed".to_owned())
}

struct KillOnDrop(Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn slim(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_slim-rag")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("slim-rag {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out)
}

fn wait_for_port(port: u16) -> Result<(), String> {
    let deadline = Instant::now() + Duration::from_secs(10);
    while Instant::now() < deadline {
        if std::net::TcpStream::connect(("127.0.0.1", port)).is_ok() {
            return Ok(());
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    Err(format!("mock server on port {port} never came up"))
}

fn end_to_end() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let port = free_port();
    let start = Instant::now();
    let _mock = KillOnDrop(
        Command::new(env!("CARGO_BIN_EXE_slim-rag"))
            .args(["mock-llm", "--script", &fixture("mock_script.json").to_string_lossy(), "--port", &port.to_string()])
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?,
    );
    wait_for_port(port)?;

    let mut config: Value = serde_json::from_str(&std::fs::read_to_string(fixture("config.json")).unwrap()).unwrap();
    for ep in config["endpoints"].as_object_mut().unwrap().values_mut() {
        ep["base_url"] = Value::String(format!("http://127.0.0.1:{port}/v1"));
    }
    std::fs::write(p("config.json"), config.to_string()).unwrap();

    let corpus = fixture("corpus.jsonl");
    let dataset = fixture("dataset.jsonl");
    let (corpus, dataset) = (corpus.to_string_lossy(), dataset.to_string_lossy());
    slim(&["index", "--corpus", &corpus, "--out", &p("index.bin")])?;
    slim(&[
        "run", "--dataset", &dataset, "--corpus-index", &p("index.bin"), "--config", &p("config.json"), "--mode",
        "slimplm", "--out", &p("results.jsonl"), "--traces", &p("traces.jsonl"),
    ])?;
    slim(&["eval", "--results", &p("results.jsonl"), "--dataset", &dataset, "--mode", "short_form", "--report", &p("report.json")])?;
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "run took {elapsed:?}");

    let results = std::fs::read_to_string(p("results.jsonl")).unwrap();
    ensure!(results.lines().count() == 10, "{} result lines", results.lines().count());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(p("report.json")).unwrap()).unwrap();
    let m = &report["metrics"];
    // Per question coverage: q04 gets 2 of 3 golds, q05 1 of 2, q08 and q09
    // none, the other six all of theirs.
    let em = (6.0 + 2.0 / 3.0 + 1.0 / 2.0) / 10.0;
    let strict = 4.0 / 10.0; // q01, q02, q05, q10 answer with a gold verbatim
    let hit = 8.0 / 10.0;
    for (key, want) in [("em", em), ("strict_em", strict), ("hit_at_1", hit)] {
        let got = m[key].as_f64().ok_or(format!("report lacks {key}"))?;
        ensure!((got - want).abs() < 1e-12, "{key} = {got}, expected {want}");
    }
    let direct: Vec<String> = results
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["plan_kind"] == "direct")
        .map(|v| v["id"].as_str().unwrap().to_owned())
        .collect();
    ensure!(direct == ["q01", "q06", "q08", "q10"], "direct questions {direct:?}");
    Ok(format!("10 questions in {elapsed:.2?}; EM {em:.4}, strict {strict}, Hit@1 {hit}"))
}

fn knowledge_gap() -> Result<String, String> {
    let rec = |i: usize, em: f64| ScoreRecord { id: format!("q{i}"), em };
    let b: Vec<ScoreRecord> = (0..10).map(|i| rec(i, if i < 5 { 1.0 } else { 0.0 })).collect();
    let a: Vec<ScoreRecord> = (0..10).map(|i| rec(i, if i < 4 || i == 9 { 1.0 } else { 0.0 })).collect();
    let rows = eval::knowledge_gap_report(&a, &b, &[0.5]).map_err(|e| e.to_string())?;
    ensure!(rows[0].overlap == Some(0.8), "overlap {:?}", rows[0].overlap);
    ensure!(rows[0].proportion_a == 0.5 && rows[0].proportion_b == 0.5, "proportions {:?}", rows[0]);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let same: Vec<ScoreRecord> = (0..40).map(|i| rec(i, rng.random_range(0..=4) as f64 / 4.0)).collect();
    let thresholds = [0.1, 0.3, 0.5, 0.7];
    for row in eval::knowledge_gap_report(&same, &same, &thresholds).map_err(|e| e.to_string())? {
        ensure!(row.overlap == Some(1.0), "A=B overlap {:?} at {}", row.overlap, row.threshold);
    }
    Ok("0.8 overlap at t=0.5; A=B gives 1.0 at 0.1/0.3/0.5/0.7".to_owned())
}

fn main() {
    // libtest-style arguments are ignored; `--list` is answered so tooling
    // that enumerates tests does not run the suite.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [(&str, Check); 9] = [
        ("metric oracles", metric_oracles),
        ("bm25 oracle", bm25_oracle),
        ("label balance", label_balance),
        ("routing traces", routing_traces),
        ("single reader call", single_reader_call),
        ("cost arithmetic", cost_arithmetic),
        ("parser round-trip", parser_round_trip),
        ("end-to-end smoke", end_to_end),
        ("knowledge gap", knowledge_gap),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    let _ = std::panic::take_hook();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
