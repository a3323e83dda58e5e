//! Prompt construction for few-shot extraction.
//!
//! A prompt shows the model one or more fully annotated exemplar documents
//! and then the target document. Inputs are rendered as a JSON array with
//! one object per token carrying the token index and character offsets;
//! expected outputs are rendered in the same JSON shape the model is asked
//! to answer in. Echoing real positions back is what lets the output
//! grounding step verify every prediction against the document.
//!
//! Templates are plain text with `{{placeholder}}` markers. The embedded
//! defaults can be overridden individually, e.g. from files on disk.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{Document, Token};
use crate::label::LabelSet;

/// What the model is asked to produce: one record per token, or one record
/// per entity span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    TokenLevel,
    SpanLevel,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::TokenLevel => "token_level",
            Granularity::SpanLevel => "span_level",
        }
    }
}

pub const DEFAULT_SYSTEM_TEMPLATE: &str = "\
{{task}}

Labels:
{{labels}}

{{format}}";

pub const DEFAULT_USER_TEMPLATE: &str = "{{exemplars}}{{target}}";

pub const DEFAULT_EXEMPLAR_TEMPLATE: &str = "\
Example input:
{{input}}

Example output:
{{output}}

";

pub const DEFAULT_TARGET_TEMPLATE: &str = "\
Input:
{{input}}

Output:";

pub const DEFAULT_TASK_TOKEN_TEMPLATE: &str = "\
You label every token of a French document with exactly one entity label. \
Tokens are given as JSON objects carrying their index and character \
offsets; reuse those values exactly and never invent positions. Tokens \
outside any entity take the label \"O\".";

pub const DEFAULT_TASK_SPAN_TEMPLATE: &str = "\
You extract every entity span from a French document. A span covers one \
or more consecutive tokens and carries exactly one label. Tokens are \
given as JSON objects carrying their index and character offsets; build \
spans from those values exactly and never invent positions.";

pub const DEFAULT_FORMAT_TOKEN_TEMPLATE: &str = "\
Answer with one JSON array and nothing else. Emit one object per token, \
in index order, each with exactly these fields: \"index\" (the token index \
from the input), \"text\" (the token text copied verbatim), \"label\" (an \
entity label or \"O\").";

pub const DEFAULT_FORMAT_SPAN_TEMPLATE: &str = "\
Answer with one JSON array and nothing else. Emit one object per entity \
span, each with exactly these fields: \"start_token\" (inclusive), \
\"end_token\" (exclusive), \"start_char\" (inclusive), \"end_char\" \
(exclusive), \"text\" (the span text copied verbatim from the document), \
\"label\". Use the indices and offsets from the input. If the document \
contains no entity, answer [].";

/// The template set a prompt is rendered from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    /// Whole system message; placeholders `task`, `labels`, `format`.
    pub system: String,
    /// Whole user message; placeholders `exemplars`, `target`.
    pub user: String,
    /// One exemplar block; placeholders `input`, `output`.
    pub exemplar: String,
    /// Target block; placeholder `input`.
    pub target: String,
    /// Task statements per granularity; no placeholders.
    pub task_token: String,
    pub task_span: String,
    /// Output-format contracts per granularity; no placeholders.
    pub format_token: String,
    pub format_span: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            system: DEFAULT_SYSTEM_TEMPLATE.to_string(),
            user: DEFAULT_USER_TEMPLATE.to_string(),
            exemplar: DEFAULT_EXEMPLAR_TEMPLATE.to_string(),
            target: DEFAULT_TARGET_TEMPLATE.to_string(),
            task_token: DEFAULT_TASK_TOKEN_TEMPLATE.to_string(),
            task_span: DEFAULT_TASK_SPAN_TEMPLATE.to_string(),
            format_token: DEFAULT_FORMAT_TOKEN_TEMPLATE.to_string(),
            format_span: DEFAULT_FORMAT_SPAN_TEMPLATE.to_string(),
        }
    }
}

/// A fully rendered prompt, ready for a chat-completion request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct Prompt {
    pub system_text: String,
    pub user_text: String,
    pub granularity: Granularity,
    pub exemplar_ids: Vec<String>,
    /// Hex SHA-256 over the length-prefixed system and user texts;
    /// identical prompts always share a fingerprint.
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("cannot render an input block for an empty token list")]
    EmptyTokens,
    #[error("a prompt needs at least one exemplar")]
    NoExemplars,
    #[error("document {doc_id:?} has {labels} token labels for {tokens} tokens")]
    UnannotatedTokens {
        doc_id: String,
        tokens: usize,
        labels: usize,
    },
    #[error("document {doc_id:?}, span [{start_token}, {end_token}): token interval out of range")]
    SpanOutOfRange {
        doc_id: String,
        start_token: usize,
        end_token: usize,
    },
    #[error("exemplar {doc_id:?} uses label {label:?} which is not in the tagset")]
    LabelOutsideSet { doc_id: String, label: String },
    #[error("template references unknown placeholder {0:?}")]
    UnknownPlaceholder(String),
    #[error("invalid context budget: {0}")]
    InvalidBudget(String),
}

#[derive(Serialize)]
struct InputEntry<'a> {
    i: usize,
    text: &'a str,
    start: usize,
    end: usize,
}

#[derive(Serialize)]
struct TokenEntry<'a> {
    index: usize,
    text: &'a str,
    label: &'a str,
}

#[derive(Serialize)]
struct SpanEntry<'a> {
    start_token: usize,
    end_token: usize,
    start_char: usize,
    end_char: usize,
    text: &'a str,
    label: &'a str,
}

fn json_block<T: Serialize>(entries: &[T]) -> String {
    if entries.is_empty() {
        return "[]".to_string();
    }
    let mut out = String::from("[\n");
    for (i, entry) in entries.iter().enumerate() {
        out.push_str("  ");
        out.push_str(&serde_json::to_string(entry).expect("block entries serialize"));
        if i + 1 < entries.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push(']');
    out
}

/// Renders the JSON input block for a token list: one object per token
/// with fields `i`, `text`, `start`, `end`.
pub fn render_input(tokens: &[Token]) -> Result<String, PromptError> {
    if tokens.is_empty() {
        return Err(PromptError::EmptyTokens);
    }
    let entries: Vec<InputEntry> = tokens
        .iter()
        .map(|t| InputEntry {
            i: t.index,
            text: &t.text,
            start: t.start,
            end: t.end,
        })
        .collect();
    Ok(json_block(&entries))
}

/// Renders the JSON output block a perfect answer for `doc` would contain.
///
/// Token level lists every token with its gold label, outside tokens
/// included. Span level lists the depth-0 spans in document order with
/// token interval, character extent, and covered text.
pub fn render_expected_output(doc: &Document, granularity: Granularity) -> Result<String, PromptError> {
    match granularity {
        Granularity::TokenLevel => {
            if doc.token_labels.len() != doc.tokens.len() {
                return Err(PromptError::UnannotatedTokens {
                    doc_id: doc.id.clone(),
                    tokens: doc.tokens.len(),
                    labels: doc.token_labels.len(),
                });
            }
            let entries: Vec<TokenEntry> = doc
                .tokens
                .iter()
                .zip(&doc.token_labels)
                .map(|(t, label)| TokenEntry {
                    index: t.index,
                    text: &t.text,
                    label,
                })
                .collect();
            Ok(json_block(&entries))
        }
        Granularity::SpanLevel => {
            let index = crate::text::TextIndex::new(&doc.text);
            let mut spans: Vec<&crate::corpus::GoldSpan> =
                doc.spans.iter().filter(|s| s.depth == 0).collect();
            spans.sort_by_key(|s| (s.start_token, s.end_token));
            let mut entries: Vec<SpanEntry> = Vec::with_capacity(spans.len());
            for span in spans {
                let (start_char, end_char) = doc
                    .token_interval_chars(span.start_token, span.end_token)
                    .ok_or_else(|| PromptError::SpanOutOfRange {
                        doc_id: doc.id.clone(),
                        start_token: span.start_token,
                        end_token: span.end_token,
                    })?;
                let text = index.slice(start_char, end_char).unwrap_or_default();
                entries.push(SpanEntry {
                    start_token: span.start_token,
                    end_token: span.end_token,
                    start_char,
                    end_char,
                    text,
                    label: &span.label,
                });
            }
            Ok(json_block(&entries))
        }
    }
}

fn render_template(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let name = after[..close].trim();
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::UnknownPlaceholder(name.to_string()))?;
                out.push_str(value);
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn render_label_list(labels: &LabelSet) -> String {
    let mut out = String::new();
    for (i, def) in labels.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str("- ");
        out.push_str(&def.name);
        out.push_str(": ");
        out.push_str(&def.description);
    }
    out
}

/// Hex SHA-256 over the length-prefixed UTF-8 bytes of both texts.
pub fn fingerprint(system_text: &str, user_text: &str) -> String {
    let mut hasher = Sha256::new();
    for part in [system_text, user_text] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Builds the prompt for one target document.
///
/// `exemplars` are fully annotated documents shown with their expected
/// outputs; `target_tokens` is the tokenization of the document to
/// extract from. Identical inputs always produce byte-identical prompts.
pub fn build_prompt(
    templates: &PromptTemplates,
    granularity: Granularity,
    labels: &LabelSet,
    exemplars: &[&Document],
    target_tokens: &[Token],
) -> Result<Prompt, PromptError> {
    if exemplars.is_empty() {
        return Err(PromptError::NoExemplars);
    }
    for doc in exemplars {
        for span in &doc.spans {
            if !labels.contains(&span.label) {
                return Err(PromptError::LabelOutsideSet {
                    doc_id: doc.id.clone(),
                    label: span.label.clone(),
                });
            }
        }
    }

    let (task, format) = match granularity {
        Granularity::TokenLevel => (&templates.task_token, &templates.format_token),
        Granularity::SpanLevel => (&templates.task_span, &templates.format_span),
    };
    let label_list = render_label_list(labels);
    let system_text = render_template(
        &templates.system,
        &[
            ("task", task.as_str()),
            ("labels", label_list.as_str()),
            ("format", format.as_str()),
        ],
    )?;

    let mut exemplar_blocks = String::new();
    for doc in exemplars {
        let input = render_input(&doc.tokens)?;
        let output = render_expected_output(doc, granularity)?;
        let block = render_template(
            &templates.exemplar,
            &[("input", input.as_str()), ("output", output.as_str())],
        )?;
        exemplar_blocks.push_str(&block);
    }
    let target_input = render_input(target_tokens)?;
    let target_block = render_template(&templates.target, &[("input", target_input.as_str())])?;
    let user_text = render_template(
        &templates.user,
        &[
            ("exemplars", exemplar_blocks.as_str()),
            ("target", target_block.as_str()),
        ],
    )?;

    let fingerprint = fingerprint(&system_text, &user_text);
    Ok(Prompt {
        system_text,
        user_text,
        granularity,
        exemplar_ids: exemplars.iter().map(|d| d.id.clone()).collect(),
        fingerprint,
    })
}

/// Result of checking a prompt against a model's context budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BudgetReport {
    pub total_chars: u64,
    pub estimated_units: u64,
    pub max_units: u64,
    pub fits: bool,
}

/// Estimates prompt size as `ceil(total_chars / chars_per_unit)` and
/// compares it with `max_units`.
pub fn check_context_budget(
    prompt: &Prompt,
    max_units: u64,
    chars_per_unit: f64,
) -> Result<BudgetReport, PromptError> {
    if max_units == 0 {
        return Err(PromptError::InvalidBudget("max_units must be positive".to_string()));
    }
    if chars_per_unit <= 0.0 || !chars_per_unit.is_finite() {
        return Err(PromptError::InvalidBudget(
            "chars_per_unit must be a positive finite number".to_string(),
        ));
    }
    let total_chars =
        (prompt.system_text.chars().count() + prompt.user_text.chars().count()) as u64;
    let exact = total_chars as f64 / chars_per_unit;
    // Round up without std's f64::ceil: truncation floors non-negative values.
    let floored = exact as u64;
    let estimated_units = if (floored as f64) < exact { floored + 1 } else { floored };
    Ok(BudgetReport {
        total_chars,
        estimated_units,
        max_units,
        fits: estimated_units <= max_units,
    })
}
