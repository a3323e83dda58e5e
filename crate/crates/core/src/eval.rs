//! Strict-boundary evaluation of predictions against gold annotations.
//!
//! Matching is exact: a span counts as a true positive only when token
//! interval and label both agree with a gold span; a token counts only
//! when its label equals the gold label. Alongside the counts, span
//! evaluation classifies every outcome as correct (exact match), partial
//! (same label, overlapping but different boundaries), incorrect (no
//! same-label overlap), or missed (gold span with no same-label overlap).
//!
//! Precision, recall, and F1 aggregate micro-style: counts are summed
//! over documents first and rates computed once at the end. Two repair
//! modes control which predictions take part: [`RepairMode::StrictOnly`]
//! drops records that were re-anchored through their text, while
//! [`RepairMode::WithRegrounded`] keeps them.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::GoldSpan;
use crate::label::OUTSIDE_LABEL;
use crate::outparse::{Diagnostics, Grounding, PredictedSpan, PredictionSet};
use crate::prompt::Granularity;

/// True positive, false positive, and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTriple {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl CountTriple {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        CountTriple { tp, fp, fn_ }
    }

    pub fn add(&mut self, other: CountTriple) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// `tp / (tp + fp)`, or 0 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, or 0 when there is no gold.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Gold instances covered by these counts.
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }
}

fn ratio(num: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Which repaired predictions take part in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairMode {
    /// Only predictions whose claimed positions were valid as claimed.
    StrictOnly,
    /// Re-anchored predictions count too.
    WithRegrounded,
}

impl RepairMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RepairMode::StrictOnly => "strict_only",
            RepairMode::WithRegrounded => "with_regrounded",
        }
    }
}

/// Span outcome taxonomy. `correct`, `partial`, and `incorrect` classify
/// accepted predictions; `missed` counts gold spans no same-label
/// prediction overlapped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanOutcomeCounts {
    pub correct: u64,
    pub partial: u64,
    pub incorrect: u64,
    pub missed: u64,
}

impl SpanOutcomeCounts {
    pub fn add(&mut self, other: SpanOutcomeCounts) {
        self.correct += other.correct;
        self.partial += other.partial;
        self.incorrect += other.incorrect;
        self.missed += other.missed;
    }

    pub fn total(&self) -> u64 {
        self.correct + self.partial + self.incorrect + self.missed
    }
}

/// Outcome percentages under both plausible denominators, since a share
/// like "49% partial" can be read against predicted or gold spans.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeShares {
    /// Shares of accepted predicted spans (correct + partial + incorrect).
    pub of_predicted: PredictedShares,
    /// Shares of gold spans (tp + fn).
    pub of_gold: GoldShares,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictedShares {
    pub correct: f64,
    pub partial: f64,
    pub incorrect: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldShares {
    /// Gold spans matched exactly.
    pub correct: f64,
    /// Gold spans overlapped by a same-label prediction without an exact
    /// match.
    pub partial: f64,
    /// Gold spans no same-label prediction touched.
    pub missed: f64,
}

impl OutcomeShares {
    /// `gold_total` is the number of gold spans, i.e. `tp + fn`.
    pub fn of(counts: &SpanOutcomeCounts, gold_total: u64) -> Self {
        let predicted_total = counts.correct + counts.partial + counts.incorrect;
        let gold_partial = gold_total
            .saturating_sub(counts.correct)
            .saturating_sub(counts.missed);
        OutcomeShares {
            of_predicted: PredictedShares {
                correct: ratio(counts.correct, predicted_total),
                partial: ratio(counts.partial, predicted_total),
                incorrect: ratio(counts.incorrect, predicted_total),
            },
            of_gold: GoldShares {
                correct: ratio(counts.correct, gold_total),
                partial: ratio(gold_partial, gold_total),
                missed: ratio(counts.missed, gold_total),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("document {doc_id:?}: prediction granularity does not match the evaluation")]
    GranularityMismatch { doc_id: String },
    #[error("document {doc_id:?}: {predicted} predicted token labels for {gold} gold labels")]
    TokenCountMismatch {
        doc_id: String,
        gold: usize,
        predicted: usize,
    },
    #[error("cannot aggregate document evaluations with mixed granularities")]
    MixedGranularity,
    #[error("cannot aggregate document evaluations with mixed repair modes")]
    MixedRepairMode,
    #[error("cannot aggregate document evaluations with mixed outside-label settings")]
    MixedOutsideHandling,
}

/// Evaluation of a single document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEval {
    pub doc_id: String,
    pub granularity: Granularity,
    pub repair_mode: RepairMode,
    pub include_outside: bool,
    pub counts: CountTriple,
    pub per_label: BTreeMap<String, CountTriple>,
    pub outcomes: Option<SpanOutcomeCounts>,
    pub diagnostics: Diagnostics,
}

/// Compares predicted token labels with gold labels position by position.
///
/// By default outside labels are not a class: an outside position on both
/// sides counts nothing, and disagreements touch only the entity label's
/// counters. With `include_outside` the outside label is scored like any
/// other class.
pub fn eval_tokens(
    gold_labels: &[String],
    pred: &PredictionSet,
    mode: RepairMode,
    include_outside: bool,
) -> Result<DocEval, EvalError> {
    let Some(tokens) = pred.tokens() else {
        return Err(EvalError::GranularityMismatch {
            doc_id: pred.doc_id.clone(),
        });
    };
    if tokens.len() != gold_labels.len() {
        return Err(EvalError::TokenCountMismatch {
            doc_id: pred.doc_id.clone(),
            gold: gold_labels.len(),
            predicted: tokens.len(),
        });
    }

    let effective = |label: &str, repaired: bool| -> Option<String> {
        if mode == RepairMode::StrictOnly && repaired {
            return effective_outside(include_outside);
        }
        if label == OUTSIDE_LABEL {
            effective_outside(include_outside)
        } else {
            Some(label.to_string())
        }
    };

    let mut per_label: BTreeMap<String, CountTriple> = BTreeMap::new();
    for (gold, token) in gold_labels.iter().zip(tokens) {
        let gold = if gold == OUTSIDE_LABEL {
            effective_outside(include_outside)
        } else {
            Some(gold.clone())
        };
        let predicted = effective(&token.label, token.repaired);
        match (gold, predicted) {
            (Some(g), Some(p)) if g == p => per_label.entry(g).or_default().tp += 1,
            (Some(g), Some(p)) => {
                per_label.entry(p).or_default().fp += 1;
                per_label.entry(g).or_default().fn_ += 1;
            }
            (Some(g), None) => per_label.entry(g).or_default().fn_ += 1,
            (None, Some(p)) => per_label.entry(p).or_default().fp += 1,
            (None, None) => {}
        }
    }

    Ok(DocEval {
        doc_id: pred.doc_id.clone(),
        granularity: Granularity::TokenLevel,
        repair_mode: mode,
        include_outside,
        counts: sum_labels(&per_label),
        per_label,
        outcomes: None,
        diagnostics: pred.diagnostics.clone(),
    })
}

fn effective_outside(include_outside: bool) -> Option<String> {
    include_outside.then(|| OUTSIDE_LABEL.to_string())
}

fn sum_labels(per_label: &BTreeMap<String, CountTriple>) -> CountTriple {
    let mut total = CountTriple::default();
    for counts in per_label.values() {
        total.add(*counts);
    }
    total
}

/// Compares predicted spans with the depth-0 gold spans of a document.
///
/// Matching is exact on token interval and label, greedy in document
/// order. Every accepted prediction without an exact match is a false
/// positive; every gold span without an exact match is a false negative.
/// The outcome taxonomy is reported alongside.
pub fn eval_spans(
    gold_spans: &[GoldSpan],
    pred: &PredictionSet,
    mode: RepairMode,
) -> Result<DocEval, EvalError> {
    let Some(spans) = pred.spans() else {
        return Err(EvalError::GranularityMismatch {
            doc_id: pred.doc_id.clone(),
        });
    };

    let gold: Vec<&GoldSpan> = gold_spans.iter().filter(|s| s.depth == 0).collect();
    let mut accepted: Vec<&PredictedSpan> = spans
        .iter()
        .filter(|s| match s.grounding {
            Grounding::Verbatim => true,
            Grounding::ReGrounded => mode == RepairMode::WithRegrounded,
            Grounding::Rejected => false,
        })
        .collect();
    accepted.sort_by(|a, b| {
        (a.start_token, a.end_token, &a.label).cmp(&(b.start_token, b.end_token, &b.label))
    });

    let mut per_label: BTreeMap<String, CountTriple> = BTreeMap::new();
    for span in &gold {
        per_label.entry(span.label.clone()).or_default();
    }

    let mut gold_taken = alloc::vec![false; gold.len()];
    let mut outcomes = SpanOutcomeCounts::default();
    let overlaps = |p: &PredictedSpan, g: &GoldSpan| {
        p.label == g.label && p.start_token < g.end_token && g.start_token < p.end_token
    };

    for pred_span in &accepted {
        let exact = gold.iter().enumerate().position(|(i, g)| {
            !gold_taken[i]
                && g.start_token == pred_span.start_token
                && g.end_token == pred_span.end_token
                && g.label == pred_span.label
        });
        match exact {
            Some(i) => {
                gold_taken[i] = true;
                per_label.entry(pred_span.label.clone()).or_default().tp += 1;
                outcomes.correct += 1;
            }
            None => {
                per_label.entry(pred_span.label.clone()).or_default().fp += 1;
                if gold.iter().any(|g| overlaps(pred_span, g)) {
                    outcomes.partial += 1;
                } else {
                    outcomes.incorrect += 1;
                }
            }
        }
    }
    for (i, gold_span) in gold.iter().enumerate() {
        if !gold_taken[i] {
            per_label.entry(gold_span.label.clone()).or_default().fn_ += 1;
        }
        if !accepted.iter().any(|p| overlaps(p, gold_span)) {
            outcomes.missed += 1;
        }
    }

    Ok(DocEval {
        doc_id: pred.doc_id.clone(),
        granularity: Granularity::SpanLevel,
        repair_mode: mode,
        include_outside: false,
        counts: sum_labels(&per_label),
        per_label,
        outcomes: Some(outcomes),
        diagnostics: pred.diagnostics.clone(),
    })
}

/// Precision, recall, and F1 of one counts triple.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Rates {
    pub fn of(counts: &CountTriple) -> Self {
        let precision = counts.precision();
        let recall = counts.recall();
        Rates {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

/// Counts and rates for one label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub counts: CountTriple,
    pub support: u64,
    pub rates: Rates,
}

/// Micro-averaged evaluation over a document collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub granularity: Granularity,
    pub repair_mode: RepairMode,
    pub include_outside: bool,
    pub documents: u64,
    pub counts: CountTriple,
    pub rates: Rates,
    /// Unweighted mean of the per-label rates. Secondary: headline numbers
    /// are the micro `rates`, which weight labels by frequency.
    pub macro_rates: Rates,
    /// False when no prediction was made (`tp + fp == 0`); the reported
    /// precision is then 0 by convention rather than undefined.
    pub precision_defined: bool,
    /// False when there is no gold instance (`tp + fn == 0`).
    pub recall_defined: bool,
    pub per_label: BTreeMap<String, LabelReport>,
    pub outcomes: Option<SpanOutcomeCounts>,
    pub outcome_shares: Option<OutcomeShares>,
    pub diagnostics: Diagnostics,
}

/// Sums per-document evaluations into one report: counts add up first,
/// rates are computed from the summed counts. All inputs must share the
/// given granularity and repair mode.
pub fn aggregate(
    granularity: Granularity,
    mode: RepairMode,
    docs: &[DocEval],
) -> Result<EvalReport, EvalError> {
    let include_outside = docs.first().is_some_and(|d| d.include_outside);
    let mut counts = CountTriple::default();
    let mut per_label: BTreeMap<String, CountTriple> = BTreeMap::new();
    let mut outcomes = SpanOutcomeCounts::default();
    let mut diagnostics = Diagnostics::default();

    for doc in docs {
        if doc.granularity != granularity {
            return Err(EvalError::MixedGranularity);
        }
        if doc.repair_mode != mode {
            return Err(EvalError::MixedRepairMode);
        }
        if doc.include_outside != include_outside {
            return Err(EvalError::MixedOutsideHandling);
        }
        counts.add(doc.counts);
        for (label, c) in &doc.per_label {
            per_label.entry(label.clone()).or_default().add(*c);
        }
        if let Some(o) = doc.outcomes {
            outcomes.add(o);
        }
        diagnostics.merge(&doc.diagnostics);
    }

    let per_label: BTreeMap<String, LabelReport> = per_label
        .into_iter()
        .map(|(label, c)| {
            (
                label,
                LabelReport {
                    counts: c,
                    support: c.support(),
                    rates: Rates::of(&c),
                },
            )
        })
        .collect();
    let macro_rates = macro_mean(per_label.values().map(|l| l.rates));

    let span_level = granularity == Granularity::SpanLevel;
    Ok(EvalReport {
        granularity,
        repair_mode: mode,
        include_outside,
        documents: docs.len() as u64,
        counts,
        rates: Rates::of(&counts),
        macro_rates,
        precision_defined: counts.tp + counts.fp > 0,
        recall_defined: counts.tp + counts.fn_ > 0,
        per_label,
        outcomes: span_level.then_some(outcomes),
        outcome_shares: span_level.then(|| {
            OutcomeShares::of(&outcomes, counts.tp + counts.fn_)
        }),
        diagnostics,
    })
}

fn macro_mean(rates: impl Iterator<Item = Rates>) -> Rates {
    let mut sum = Rates::default();
    let mut n = 0u64;
    for r in rates {
        sum.precision += r.precision;
        sum.recall += r.recall;
        sum.f1 += r.f1;
        n += 1;
    }
    if n == 0 {
        return Rates::default();
    }
    Rates {
        precision: sum.precision / n as f64,
        recall: sum.recall / n as f64,
        f1: sum.f1 / n as f64,
    }
}
