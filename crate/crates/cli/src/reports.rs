//! Report rendering: a fixed-layout Model/Precision/Recall/F1 table with
//! half-up two-decimal rounding, a CSV with full precision, and JSON.
//! The table carries published reference scores for context; machine
//! formats contain only the measured rows.

use serde::Serialize;

/// One table row: a model (or run) name with its micro rates.
#[derive(Debug, Clone, Serialize)]
pub struct ModelReport {
    pub model: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Published scores shown under the measured rows for comparison.
pub const REFERENCE_ROWS: [(&str, f64, f64, f64); 4] = [
    ("GPT-3.5", 0.81, 0.36, 0.50),
    ("GPT-4", 0.75, 0.62, 0.67),
    ("GPT-4o", 0.68, 0.72, 0.70),
    ("Fine-tuned BERT", 0.93, 0.94, 0.93),
];

/// Half-up rounding to hundredths, e.g. 0.4982 -> 50, 0.675 -> 68.
/// A tiny epsilon compensates for decimals that are stored slightly
/// below their printed value.
fn half_up_cents(rate: f64) -> i64 {
    (rate * 100.0 + 0.5 + 1e-9).floor() as i64
}

/// Formats a rate in [0, 1] as a half-up two-decimal string.
pub fn format_rate(rate: f64) -> String {
    let cents = half_up_cents(rate);
    format!("{}.{:02}", cents / 100, cents % 100)
}

pub fn render_table(rows: &[ModelReport]) -> String {
    let mut cells: Vec<[String; 4]> = Vec::new();
    for row in rows {
        cells.push([
            row.model.clone(),
            format_rate(row.precision),
            format_rate(row.recall),
            format_rate(row.f1),
        ]);
    }
    for (name, p, r, f) in REFERENCE_ROWS {
        cells.push([
            format!("{name} (reference)"),
            format_rate(p),
            format_rate(r),
            format_rate(f),
        ]);
    }

    let header = ["Model", "Precision", "Recall", "F1"];
    let name_width = cells
        .iter()
        .map(|row| row[0].len())
        .chain([header[0].len()])
        .max()
        .unwrap_or(0);
    let mut out = format!(
        "{:<name_width$}  {:>9}  {:>6}  {:>4}\n",
        header[0], header[1], header[2], header[3]
    );
    for row in cells {
        out.push_str(&format!(
            "{:<name_width$}  {:>9}  {:>6}  {:>4}\n",
            row[0], row[1], row[2], row[3]
        ));
    }
    out
}

pub fn render_csv(rows: &[ModelReport]) -> String {
    let mut out = String::from("model,precision,recall,f1\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&row.model),
            row.precision,
            row.recall,
            row.f1
        ));
    }
    out
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

pub fn render_json(rows: &[ModelReport]) -> String {
    let mut out = serde_json::to_string_pretty(rows).expect("report serialization");
    out.push('\n');
    out
}

/// Human-readable rendering of one aggregate evaluation report.
pub fn render_eval_text(report: &nerval::eval::EvalReport) -> String {
    use std::fmt::Write;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} evaluation, {} mode, {} document(s)",
        report.granularity.as_str(),
        report.repair_mode.as_str(),
        report.documents
    );
    if report.granularity == nerval::prompt::Granularity::TokenLevel {
        let _ = writeln!(
            out,
            "outside class: {}",
            if report.include_outside { "counted" } else { "excluded" }
        );
    }
    let _ = writeln!(
        out,
        "micro: P={} R={} F1={} (tp={} fp={} fn={})",
        format_rate(report.rates.precision),
        format_rate(report.rates.recall),
        format_rate(report.rates.f1),
        report.counts.tp,
        report.counts.fp,
        report.counts.fn_
    );
    if !report.precision_defined {
        let _ = writeln!(out, "note: no predictions were made; precision shown as 0 by convention");
    }
    if !report.recall_defined {
        let _ = writeln!(out, "note: no gold instances; recall shown as 0 by convention");
    }
    let _ = writeln!(
        out,
        "macro (secondary): P={} R={} F1={}",
        format_rate(report.macro_rates.precision),
        format_rate(report.macro_rates.recall),
        format_rate(report.macro_rates.f1)
    );

    if !report.per_label.is_empty() {
        let _ = writeln!(out, "\nper label:");
        let width = report.per_label.keys().map(|l| l.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            out,
            "  {:<width$}  {:>9}  {:>6}  {:>4}  {:>7}",
            "label", "precision", "recall", "F1", "support"
        );
        for (label, lr) in &report.per_label {
            let _ = writeln!(
                out,
                "  {:<width$}  {:>9}  {:>6}  {:>4}  {:>7}",
                label,
                format_rate(lr.rates.precision),
                format_rate(lr.rates.recall),
                format_rate(lr.rates.f1),
                lr.support
            );
        }
    }

    if let (Some(outcomes), Some(shares)) = (&report.outcomes, &report.outcome_shares) {
        let _ = writeln!(
            out,
            "\nspan outcomes: correct={} partial={} incorrect={} missed={}",
            outcomes.correct, outcomes.partial, outcomes.incorrect, outcomes.missed
        );
        let _ = writeln!(
            out,
            "  of predicted spans: correct={} partial={} incorrect={}",
            format_rate(shares.of_predicted.correct),
            format_rate(shares.of_predicted.partial),
            format_rate(shares.of_predicted.incorrect)
        );
        let _ = writeln!(
            out,
            "  of gold spans:      correct={} partial={} missed={}",
            format_rate(shares.of_gold.correct),
            format_rate(shares.of_gold.partial),
            format_rate(shares.of_gold.missed)
        );
    }

    let d = &report.diagnostics;
    let _ = writeln!(
        out,
        "\ndiagnostics: no_payload={} schema_violation={} out_of_bounds={} \
         repaired={} text_rejected={} unknown_label={} example_echo={} duplicate={}",
        d.no_payload,
        d.schema_violation,
        d.out_of_bounds,
        d.text_mismatch_repaired,
        d.text_mismatch_rejected,
        d.unknown_label,
        d.example_echo,
        d.duplicate
    );
    if !d.missing_attribute.is_empty() {
        let listed: Vec<String> = d
            .missing_attribute
            .iter()
            .map(|(name, count)| format!("{name}={count}"))
            .collect();
        let _ = writeln!(out, "missing attributes: {}", listed.join(" "));
    }
    out
}

/// One fixed-width row per evaluated document.
pub fn render_per_doc_table(evals: &[nerval::eval::DocEval]) -> String {
    use std::fmt::Write;

    let width = evals.iter().map(|e| e.doc_id.len()).max().unwrap_or(8).max(8);
    let mut out = format!(
        "{:<width$}  {:>4}  {:>4}  {:>4}  {:>9}  {:>6}  {:>4}\n",
        "document", "tp", "fp", "fn", "precision", "recall", "F1"
    );
    for eval in evals {
        let _ = writeln!(
            out,
            "{:<width$}  {:>4}  {:>4}  {:>4}  {:>9}  {:>6}  {:>4}",
            eval.doc_id,
            eval.counts.tp,
            eval.counts.fp,
            eval.counts.fn_,
            format_rate(eval.counts.precision()),
            format_rate(eval.counts.recall()),
            format_rate(nerval::eval::f1(eval.counts.precision(), eval.counts.recall()))
        );
    }
    out
}
