//! Recovery of structured predictions from raw model output.
//!
//! Chat models answer in prose, code fences, or bare JSON, and the JSON
//! they produce routinely claims positions that do not exist. This module
//! turns a raw response into a [`PredictionSet`] in which every surviving
//! record is grounded in the document:
//!
//! 1. [`extract_payload`] finds the first well-formed JSON array anywhere
//!    in the text.
//! 2. [`parse_span_output`] / [`parse_token_output`] walk the records,
//!    dropping or repairing defective ones and counting every defect in
//!    [`Diagnostics`].
//! 3. [`ground_span`] anchors one span claim: a valid token interval whose
//!    text agrees with the claim is kept verbatim; otherwise the claimed
//!    text is searched in the document and re-anchored to the occurrence
//!    nearest the claimed position; otherwise the claim is rejected.
//! 4. [`detect_example_echo`] rejects whole outputs that merely copy the
//!    prompt's exemplar instead of reading the target document.
//!
//! Every function here is total: arbitrary input produces a prediction
//! set and diagnostics, never a panic. Record fields of the wrong JSON
//! type are treated as absent, except `label`, which must be a string for
//! the record to mean anything. Accepted plus dropped records always add
//! up to the payload record count.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::Document;
use crate::label::{LabelSet, OUTSIDE_LABEL};
use crate::prompt::Granularity;
use crate::text::TextIndex;
use crate::tokenize::align_span;

/// Per-response defect counters. Each dropped record increments exactly
/// one counter; `text_mismatch_repaired` counts records that were kept
/// after re-anchoring and `echo_ratio` records the exemplar-overlap ratio
/// wherever it was measured.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// No JSON payload could be found in the raw response.
    pub no_payload: u32,
    /// The payload or a record was not of the expected JSON shape.
    pub schema_violation: u32,
    /// Records lacking a required attribute, keyed by attribute name.
    pub missing_attribute: BTreeMap<String, u32>,
    /// Token index or interval pointing outside the document.
    pub out_of_bounds: u32,
    /// Claimed text disagreed with the claimed position but was
    /// re-anchored successfully; these records are kept.
    pub text_mismatch_repaired: u32,
    /// Claimed text not present in the document at all.
    pub text_mismatch_rejected: u32,
    /// Label outside the tagset.
    pub unknown_label: u32,
    /// Previously accepted records discarded because the response echoed
    /// the exemplar.
    pub example_echo: u32,
    /// Records duplicating an already accepted record.
    pub duplicate: u32,
    /// Share of claimed texts that occur in the exemplar but not in the
    /// target document; set once echo detection has run.
    pub echo_ratio: Option<f64>,
}

impl Diagnostics {
    /// Total number of dropped records.
    pub fn dropped_records(&self) -> u64 {
        let missing: u32 = self.missing_attribute.values().sum();
        u64::from(self.schema_violation)
            + u64::from(missing)
            + u64::from(self.out_of_bounds)
            + u64::from(self.text_mismatch_rejected)
            + u64::from(self.unknown_label)
            + u64::from(self.example_echo)
            + u64::from(self.duplicate)
    }

    fn count_missing(&mut self, attribute: &str) {
        *self
            .missing_attribute
            .entry(attribute.to_string())
            .or_insert(0) += 1;
    }

    /// Adds another set of counters into this one. Ratios do not sum, so
    /// the merged `echo_ratio` is cleared.
    pub fn merge(&mut self, other: &Diagnostics) {
        self.no_payload += other.no_payload;
        self.schema_violation += other.schema_violation;
        for (k, v) in &other.missing_attribute {
            *self.missing_attribute.entry(k.clone()).or_insert(0) += v;
        }
        self.out_of_bounds += other.out_of_bounds;
        self.text_mismatch_repaired += other.text_mismatch_repaired;
        self.text_mismatch_rejected += other.text_mismatch_rejected;
        self.unknown_label += other.unknown_label;
        self.example_echo += other.example_echo;
        self.duplicate += other.duplicate;
        self.echo_ratio = None;
    }
}

/// How an accepted span relates to the positions the model claimed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grounding {
    /// Claimed token interval was valid and consistent with the claimed
    /// text.
    Verbatim,
    /// Claimed position was unusable; the span was re-anchored to an
    /// occurrence of the claimed text.
    ReGrounded,
    /// No anchoring was possible; the record carries the claim as-is and
    /// is never part of an accepted prediction set.
    Rejected,
}

/// An extracted entity span, grounded in the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedSpan {
    pub start_token: usize,
    pub end_token: usize,
    pub start_char: usize,
    pub end_char: usize,
    pub text: String,
    pub label: String,
    pub grounding: Grounding,
}

/// One token-level prediction. Tokens the model never mentioned are
/// materialized with the outside label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedToken {
    pub index: usize,
    pub label: String,
    /// True when the record was re-anchored to this token via its text.
    #[serde(default)]
    pub repaired: bool,
}

/// Predictions of one granularity for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Records {
    Spans(Vec<PredictedSpan>),
    Tokens(Vec<PredictedToken>),
}

/// Everything recovered from one model response for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub doc_id: String,
    pub records: Records,
    pub diagnostics: Diagnostics,
    /// The untouched model output, kept for audit.
    pub raw_text: String,
    /// True when the whole response was rejected as an exemplar echo.
    pub echoed: bool,
    /// Every non-empty `text` value the payload claimed, in payload order,
    /// regardless of whether its record survived.
    pub claimed_texts: Vec<String>,
    /// Records in the JSON payload.
    pub payload_records: u32,
    /// Records accepted into `records`; for token level this counts
    /// explicit records, not materialized outside tokens.
    pub accepted_records: u32,
}

impl PredictionSet {
    /// An empty set: no accepted spans, or all-outside token labels.
    pub fn empty(doc: &Document, granularity: Granularity) -> Self {
        let records = match granularity {
            Granularity::SpanLevel => Records::Spans(Vec::new()),
            Granularity::TokenLevel => Records::Tokens(
                (0..doc.tokens.len())
                    .map(|index| PredictedToken {
                        index,
                        label: OUTSIDE_LABEL.to_string(),
                        repaired: false,
                    })
                    .collect(),
            ),
        };
        PredictionSet {
            doc_id: doc.id.clone(),
            records,
            diagnostics: Diagnostics::default(),
            raw_text: String::new(),
            echoed: false,
            claimed_texts: Vec::new(),
            payload_records: 0,
            accepted_records: 0,
        }
    }

    pub fn granularity(&self) -> Granularity {
        match self.records {
            Records::Spans(_) => Granularity::SpanLevel,
            Records::Tokens(_) => Granularity::TokenLevel,
        }
    }

    pub fn spans(&self) -> Option<&[PredictedSpan]> {
        match &self.records {
            Records::Spans(s) => Some(s),
            Records::Tokens(_) => None,
        }
    }

    pub fn tokens(&self) -> Option<&[PredictedToken]> {
        match &self.records {
            Records::Tokens(t) => Some(t),
            Records::Spans(_) => None,
        }
    }
}

/// Finds the first well-formed JSON array in `raw`, scanning over prose
/// and code fences. Returns `None` when no balanced bracket region parses
/// as JSON.
pub fn extract_payload(raw: &str) -> Option<Value> {
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            if let Some(end) = balanced_end(bytes, i) {
                if let Ok(value) = serde_json::from_str::<Value>(&raw[i..=end]) {
                    return Some(value);
                }
            }
        }
        i += 1;
    }
    None
}

/// Byte offset of the bracket closing the one at `start`, honouring JSON
/// string syntax. Bracket bytes are ASCII, so scanning bytes is safe in
/// UTF-8 text.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth: usize = 0;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'[' | b'{' => depth += 1,
            b']' | b'}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(start + offset);
                }
            }
            _ => {}
        }
    }
    None
}

/// One span record as claimed by the model, before grounding. Fields the
/// payload lacked, or carried with a wrong JSON type, are `None`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpanClaim {
    pub start_token: Option<usize>,
    pub end_token: Option<usize>,
    pub start_char: Option<usize>,
    pub end_char: Option<usize>,
    pub text: Option<String>,
    pub label: String,
}

enum SpanDrop {
    OutOfBounds,
    MissingText,
    TextMismatch,
}

/// Anchors one span claim in the document; see the module docs for the
/// priority order. The result's `grounding` tells whether the claim was
/// kept verbatim, re-anchored, or rejected.
pub fn ground_span(claim: &SpanClaim, doc: &Document) -> PredictedSpan {
    let index = TextIndex::new(&doc.text);
    match ground(claim, doc, &index) {
        Ok(span) => span,
        Err(_) => rejected_span(claim),
    }
}

fn rejected_span(claim: &SpanClaim) -> PredictedSpan {
    PredictedSpan {
        start_token: claim.start_token.unwrap_or(0),
        end_token: claim.end_token.unwrap_or(0),
        start_char: claim.start_char.unwrap_or(0),
        end_char: claim.end_char.unwrap_or(0),
        text: claim.text.clone().unwrap_or_default(),
        label: claim.label.clone(),
        grounding: Grounding::Rejected,
    }
}

fn ground(claim: &SpanClaim, doc: &Document, index: &TextIndex) -> Result<PredictedSpan, SpanDrop> {
    if let (Some(st), Some(et)) = (claim.start_token, claim.end_token) {
        if let Some((start_char, end_char)) = doc.token_interval_chars(st, et) {
            let extent_text = index
                .slice(start_char, end_char)
                .expect("token extents lie in the text");
            let text_agrees = match claim.text.as_deref() {
                Some(t) => t == extent_text,
                None => true,
            };
            if text_agrees {
                return Ok(PredictedSpan {
                    start_token: st,
                    end_token: et,
                    start_char,
                    end_char,
                    text: extent_text.to_string(),
                    label: claim.label.clone(),
                    grounding: Grounding::Verbatim,
                });
            }
        }
    }

    let Some(text) = claim.text.as_deref().filter(|t| !t.is_empty()) else {
        return Err(if claim.start_token.is_some() || claim.end_token.is_some() {
            SpanDrop::OutOfBounds
        } else {
            SpanDrop::MissingText
        });
    };

    let needle_len = text.chars().count();
    let claimed_start = claim.start_char.unwrap_or(0);
    let mut candidates = index.occurrences(text);
    candidates.sort_by_key(|&at| (at.abs_diff(claimed_start), at));
    for at in candidates {
        if let Ok(Some((first, last))) = align_span(&doc.tokens, index.char_len(), at, at + needle_len)
        {
            return Ok(PredictedSpan {
                start_token: first,
                end_token: last,
                start_char: at,
                end_char: at + needle_len,
                text: text.to_string(),
                label: claim.label.clone(),
                grounding: Grounding::ReGrounded,
            });
        }
    }
    Err(SpanDrop::TextMismatch)
}

fn field_usize(obj: &serde_json::Map<String, Value>, key: &str) -> Option<usize> {
    obj.get(key)?.as_u64().and_then(|v| usize::try_from(v).ok())
}

fn field_text(obj: &serde_json::Map<String, Value>) -> Option<String> {
    obj.get("text")?
        .as_str()
        .filter(|t| !t.is_empty())
        .map(String::from)
}

/// Pulls the label out of a record, counting the defect when it is
/// missing or not a string.
fn field_label(obj: &serde_json::Map<String, Value>, diags: &mut Diagnostics) -> Option<String> {
    match obj.get("label") {
        None => {
            diags.count_missing("label");
            None
        }
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            diags.schema_violation += 1;
            None
        }
    }
}

/// Walks a span-level payload, grounding every record against `doc`.
/// Defective records are dropped into diagnostics; duplicates (same token
/// interval and label) keep the first occurrence.
pub fn parse_span_output(payload: &Value, doc: &Document, labels: &LabelSet) -> PredictionSet {
    let mut set = PredictionSet::empty(doc, Granularity::SpanLevel);
    let Some(elements) = payload.as_array() else {
        // A non-array payload counts as one defective record so that
        // accepted plus dropped still reconciles with the payload size.
        set.payload_records = 1;
        set.diagnostics.schema_violation += 1;
        return set;
    };
    let index = TextIndex::new(&doc.text);
    let mut spans: Vec<PredictedSpan> = Vec::new();
    let mut seen: BTreeSet<(usize, usize, String)> = BTreeSet::new();

    set.payload_records = elements.len() as u32;
    for element in elements {
        let Some(obj) = element.as_object() else {
            set.diagnostics.schema_violation += 1;
            continue;
        };
        let claimed_text = field_text(obj);
        if let Some(t) = &claimed_text {
            set.claimed_texts.push(t.clone());
        }
        let Some(label) = field_label(obj, &mut set.diagnostics) else {
            continue;
        };
        if !labels.contains(&label) {
            set.diagnostics.unknown_label += 1;
            continue;
        }
        let claim = SpanClaim {
            start_token: field_usize(obj, "start_token"),
            end_token: field_usize(obj, "end_token"),
            start_char: field_usize(obj, "start_char"),
            end_char: field_usize(obj, "end_char"),
            text: claimed_text,
            label,
        };
        match ground(&claim, doc, &index) {
            Ok(span) => {
                let key = (span.start_token, span.end_token, span.label.clone());
                if !seen.insert(key) {
                    set.diagnostics.duplicate += 1;
                    continue;
                }
                if span.grounding == Grounding::ReGrounded {
                    set.diagnostics.text_mismatch_repaired += 1;
                }
                spans.push(span);
            }
            Err(SpanDrop::OutOfBounds) => set.diagnostics.out_of_bounds += 1,
            Err(SpanDrop::MissingText) => set.diagnostics.count_missing("text"),
            Err(SpanDrop::TextMismatch) => set.diagnostics.text_mismatch_rejected += 1,
        }
    }
    set.accepted_records = spans.len() as u32;
    set.records = Records::Spans(spans);
    set
}

/// Walks a token-level payload. Every document token appears in the
/// result; records the model omitted become outside labels. A claimed
/// text disagreeing with the token at the claimed index re-anchors the
/// record when exactly one token carries that text.
pub fn parse_token_output(payload: &Value, doc: &Document, labels: &LabelSet) -> PredictionSet {
    let mut set = PredictionSet::empty(doc, Granularity::TokenLevel);
    let Some(elements) = payload.as_array() else {
        set.payload_records = 1;
        set.diagnostics.schema_violation += 1;
        return set;
    };
    let token_count = doc.tokens.len();
    let mut assigned: Vec<Option<(String, bool)>> = alloc::vec![None; token_count];

    set.payload_records = elements.len() as u32;
    for element in elements {
        let Some(obj) = element.as_object() else {
            set.diagnostics.schema_violation += 1;
            continue;
        };
        let claimed_text = field_text(obj);
        if let Some(t) = &claimed_text {
            set.claimed_texts.push(t.clone());
        }
        let Some(label) = field_label(obj, &mut set.diagnostics) else {
            continue;
        };
        if label != OUTSIDE_LABEL && !labels.contains(&label) {
            set.diagnostics.unknown_label += 1;
            continue;
        }
        let Some(mut index) = field_usize(obj, "index") else {
            set.diagnostics.count_missing("index");
            continue;
        };
        if index >= token_count {
            set.diagnostics.out_of_bounds += 1;
            continue;
        }
        let mut repaired = false;
        if let Some(text) = &claimed_text {
            if *text != doc.tokens[index].text {
                let mut matches = doc.tokens.iter().filter(|t| t.text == *text);
                match (matches.next(), matches.next()) {
                    (Some(only), None) => {
                        index = only.index;
                        repaired = true;
                        set.diagnostics.text_mismatch_repaired += 1;
                    }
                    _ => {
                        set.diagnostics.text_mismatch_rejected += 1;
                        continue;
                    }
                }
            }
        }
        if assigned[index].is_some() {
            set.diagnostics.duplicate += 1;
            continue;
        }
        assigned[index] = Some((label, repaired));
        set.accepted_records += 1;
    }

    let tokens = assigned
        .into_iter()
        .enumerate()
        .map(|(index, slot)| match slot {
            Some((label, repaired)) => PredictedToken { index, label, repaired },
            None => PredictedToken {
                index,
                label: OUTSIDE_LABEL.to_string(),
                repaired: false,
            },
        })
        .collect();
    set.records = Records::Tokens(tokens);
    set
}

/// Rejects a whole response when it mostly repeats the exemplar: among
/// the claimed texts, those found in the exemplar text but not in the
/// target text are counted, and if their share reaches `threshold` every
/// accepted record is discarded. The measured share is recorded either
/// way. Responses claiming no texts are left untouched.
pub fn detect_example_echo(
    mut set: PredictionSet,
    exemplar: &Document,
    target: &Document,
    threshold: f64,
) -> PredictionSet {
    if set.claimed_texts.is_empty() {
        return set;
    }
    let from_exemplar = set
        .claimed_texts
        .iter()
        .filter(|t| exemplar.text.contains(t.as_str()) && !target.text.contains(t.as_str()))
        .count();
    let ratio = from_exemplar as f64 / set.claimed_texts.len() as f64;
    set.diagnostics.echo_ratio = Some(ratio);
    if from_exemplar > 0 && ratio >= threshold {
        set.echoed = true;
        set.diagnostics.example_echo += set.accepted_records;
        set.accepted_records = 0;
        match &mut set.records {
            Records::Spans(spans) => spans.clear(),
            Records::Tokens(tokens) => {
                for token in tokens {
                    token.label = OUTSIDE_LABEL.to_string();
                    token.repaired = false;
                }
            }
        }
    }
    set
}

/// Full recovery pipeline for one raw response, exemplar echo detection
/// excluded (that step needs the exemplar and runs separately).
pub fn parse_response(
    raw: &str,
    doc: &Document,
    labels: &LabelSet,
    granularity: Granularity,
) -> PredictionSet {
    let mut set = match extract_payload(raw) {
        Some(payload) => match granularity {
            Granularity::SpanLevel => parse_span_output(&payload, doc, labels),
            Granularity::TokenLevel => parse_token_output(&payload, doc, labels),
        },
        None => {
            let mut empty = PredictionSet::empty(doc, granularity);
            empty.diagnostics.no_payload += 1;
            empty
        }
    };
    set.raw_text = raw.to_string();
    set
}
