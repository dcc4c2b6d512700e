//! Markdown tables over several eval reports: one quality table, one cost
//! table, one row per report.

use std::fmt::Write;

use slim_rag_core::eval::EvalReport;

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", x * 100.0)).unwrap_or_else(|| "-".into())
}

pub fn render(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| run | n | EM | strict EM | Hit@1 | Rouge-1 | Rouge-2 | Rouge-L |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
    for (name, r) in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "| {name} | {} | {} | {} | {} | {} | {} | {} |",
            r.samples,
            pct(m.em),
            pct(m.strict_em),
            pct(m.hit_at_1),
            pct(m.rouge1),
            pct(m.rouge2),
            pct(m.rouge_l)
        );
    }
    out.push('\n');
    let _ = writeln!(out, "| run | Chat | Proxy | Rewrite | Judge | Self-eval | Total | Weighted | Ratio |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|---|");
    for (name, r) in rows {
        let c = &r.cost;
        let _ = writeln!(
            out,
            "| {name} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.4} |",
            c.chat, c.proxy, c.rewrite, c.judge, c.self_eval, c.total, c.weighted_extra_cost, c.extra_cost_ratio
        );
    }
    out
}
