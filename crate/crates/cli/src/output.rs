//! Text formats written by the CLI: decision CSV, retained list, PGM heatmap,
//! budget CSV and key=value blocks.

use std::fmt::Write as _;

use topv_core::pruner::PruneDecision;
use topv_core::{BudgetReport, ModelShape, TokenSet};

pub fn decision_csv(decision: &PruneDecision) -> String {
    let mut out = String::from("index,importance,status\n");
    for (i, (imp, status)) in decision.importance.iter().zip(decision.statuses()).enumerate() {
        writeln!(out, "{i},{imp:e},{}", status.as_str()).unwrap();
    }
    out
}

pub fn retained_txt(decision: &PruneDecision) -> String {
    let mut out = String::new();
    for i in &decision.retained {
        writeln!(out, "{i}").unwrap();
    }
    out
}

/// Plain (P2) grayscale map of `values` laid out on the token grid,
/// min-max scaled to 0..=255. Cells without a token stay 0.
pub fn importance_pgm(tokens: &TokenSet, values: &[f64]) -> String {
    let (h, w) = (tokens.grid_h(), tokens.grid_w());
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut pixels = vec![0u8; h * w];
    for (&(x, y), &v) in tokens.coords().iter().zip(values) {
        let level = if span > 0.0 { ((v - lo) / span * 255.0).round() } else { 0.0 };
        pixels[y * w + x] = level.clamp(0.0, 255.0) as u8;
    }
    let mut out = format!("P2\n{w} {h}\n255\n");
    for row in pixels.chunks(w) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub const BUDGET_CSV_HEADER: &str =
    "retained_tokens,n_visual,flops_ratio_tokenfraction,flops_ratio_layerweighted,kv_ratio";

pub fn budget_csv_row(report: &BudgetReport, shape: &ModelShape) -> String {
    format!(
        "{},{},{},{},{}",
        report.retained_tokens,
        shape.n_visual,
        report.flops_ratio_tokenfraction,
        report.flops_ratio_layerweighted,
        report.kv_ratio
    )
}

pub fn budget_csv(report: &BudgetReport, shape: &ModelShape) -> String {
    format!("{BUDGET_CSV_HEADER}\n{}\n", budget_csv_row(report, shape))
}

pub fn budget_kv(report: &BudgetReport, shape: &ModelShape) -> String {
    let mut out = String::new();
    writeln!(out, "n_layers={}", shape.n_layers).unwrap();
    writeln!(out, "hidden={}", shape.hidden).unwrap();
    writeln!(out, "mlp_hidden={}", shape.mlp_hidden).unwrap();
    writeln!(out, "n_visual={}", shape.n_visual).unwrap();
    writeln!(out, "prune_layer={}", shape.prune_layer).unwrap();
    writeln!(out, "retained_tokens={}", report.retained_tokens).unwrap();
    writeln!(out, "flops_ratio_tokenfraction={:.6}", report.flops_ratio_tokenfraction).unwrap();
    writeln!(out, "flops_ratio_layerweighted={:.6}", report.flops_ratio_layerweighted).unwrap();
    writeln!(out, "kv_ratio={:.6}", report.kv_ratio).unwrap();
    out
}
