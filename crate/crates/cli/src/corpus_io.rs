//! Corpus files: the native line-delimited document format, label-set
//! files, and a mapping-profile importer for third-party layouts.
//!
//! Native format: one JSON document per line with fields `id`, `text`,
//! `tokens` (array of `{text, start, end}`), `token_labels`, and `spans`
//! (array of `{start_token, end_token, label, depth}`). All offsets count
//! Unicode scalar values.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use nerval::corpus::{Corpus, Document, GoldSpan, Split, Token};
use nerval::label::{LabelSet, OUTSIDE_LABEL};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDoc {
    id: String,
    text: String,
    tokens: Vec<WireToken>,
    token_labels: Vec<String>,
    spans: Vec<WireSpan>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireToken {
    text: String,
    start: usize,
    end: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSpan {
    start_token: usize,
    end_token: usize,
    label: String,
    #[serde(default)]
    depth: u32,
}

impl WireDoc {
    fn into_document(self) -> Document {
        Document {
            id: self.id,
            text: self.text,
            tokens: self
                .tokens
                .into_iter()
                .enumerate()
                .map(|(index, t)| Token { index, text: t.text, start: t.start, end: t.end })
                .collect(),
            token_labels: self.token_labels,
            spans: self
                .spans
                .into_iter()
                .map(|s| GoldSpan {
                    start_token: s.start_token,
                    end_token: s.end_token,
                    label: s.label,
                    depth: s.depth,
                })
                .collect(),
        }
    }

    fn from_document(doc: &Document) -> WireDoc {
        WireDoc {
            id: doc.id.clone(),
            text: doc.text.clone(),
            tokens: doc
                .tokens
                .iter()
                .map(|t| WireToken { text: t.text.clone(), start: t.start, end: t.end })
                .collect(),
            token_labels: doc.token_labels.clone(),
            spans: doc
                .spans
                .iter()
                .map(|s| WireSpan {
                    start_token: s.start_token,
                    end_token: s.end_token,
                    label: s.label.clone(),
                    depth: s.depth,
                })
                .collect(),
        }
    }
}

/// All defects found in one corpus file, each tied to its line number.
#[derive(Debug)]
pub struct LoadError {
    pub path: PathBuf,
    pub lines: Vec<LineError>,
}

#[derive(Debug)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} malformed document(s)",
            self.path.display(),
            self.lines.len()
        )?;
        for err in &self.lines {
            writeln!(f, "  line {}: {}", err.line, err.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for LoadError {}

/// Loads and validates a native-format corpus. Defective lines are
/// collected, not fail-fast, so one pass reports every problem.
pub fn load_corpus(path: &Path, label_set: LabelSet, split: Split) -> Result<Corpus> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read corpus file {}", path.display()))?;
    let mut documents = Vec::new();
    let mut errors = Vec::new();
    let mut seen_ids = std::collections::BTreeSet::new();

    for (number, line) in raw.lines().enumerate() {
        let number = number + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<WireDoc>(line) {
            Ok(wire) => {
                let doc = wire.into_document();
                if !seen_ids.insert(doc.id.clone()) {
                    errors.push(LineError {
                        line: number,
                        message: format!("duplicate document id {:?}", doc.id),
                    });
                    continue;
                }
                if let Err(err) = doc.validate(&label_set) {
                    errors.push(LineError {
                        line: number,
                        message: format!("document {:?}: {err}", doc.id),
                    });
                    continue;
                }
                documents.push(doc);
            }
            Err(err) => errors.push(LineError { line: number, message: err.to_string() }),
        }
    }

    if !errors.is_empty() {
        return Err(LoadError { path: path.to_path_buf(), lines: errors }.into());
    }
    Corpus::new(documents, label_set, split)
        .map_err(|err| anyhow!("corpus {}: {err}", path.display()))
}

/// One document as a single native-format JSON line (no trailing newline).
pub fn serialize_document(doc: &Document) -> String {
    serde_json::to_string(&WireDoc::from_document(doc)).expect("document serialization")
}

/// Writes a corpus in the native format, one line per document.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    for doc in &corpus.documents {
        out.push_str(&serialize_document(doc));
        out.push('\n');
    }
    std::fs::write(path, out)
        .with_context(|| format!("cannot write corpus file {}", path.display()))
}

/// Loads a label set from a JSON array of `{name, description}` entries.
pub fn load_label_set(path: &Path) -> Result<LabelSet> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read label file {}", path.display()))?;
    serde_json::from_str(&raw).with_context(|| format!("invalid label file {}", path.display()))
}

/// Column mapping from a third-party line-delimited JSON layout onto the
/// native schema. Only `tokens` is mandatory; everything else has a
/// sensible derivation (ids are numbered, text is re-joined from tokens,
/// offsets are recovered by scanning, spans can come from BIO runs).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingProfile {
    /// Field holding the document id.
    pub id: Option<String>,
    /// Field holding the raw text.
    pub text: Option<String>,
    /// Field holding the token array.
    pub tokens: String,
    /// Subfield of a token object holding its surface text; omitted when
    /// tokens are plain strings.
    pub token_text: Option<String>,
    /// Subfields holding character offsets; omitted offsets are recovered
    /// by scanning the text left to right.
    pub token_start: Option<String>,
    pub token_end: Option<String>,
    /// Field holding per-token labels.
    pub token_labels: Option<String>,
    /// Labels carry BIO prefixes ("B-Spatial", "I-Spatial"); prefixes are
    /// stripped and spans derived from the runs.
    #[serde(default)]
    pub bio_labels: bool,
    /// Field holding the span array, with its subfield names.
    pub spans: Option<String>,
    pub span_start: Option<String>,
    pub span_end: Option<String>,
    pub span_label: Option<String>,
    pub span_depth: Option<String>,
}

pub fn load_mapping(path: &Path) -> Result<MappingProfile> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read mapping file {}", path.display()))?;
    toml::from_str(&raw).with_context(|| format!("invalid mapping file {}", path.display()))
}

/// Imports a third-party corpus through a mapping profile, validating the
/// result exactly like a native load.
pub fn import_corpus(
    path: &Path,
    mapping: &MappingProfile,
    label_set: LabelSet,
    split: Split,
) -> Result<Corpus> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read corpus file {}", path.display()))?;
    let mut documents = Vec::new();
    let mut errors = Vec::new();
    let mut seen_ids = std::collections::BTreeSet::new();

    for (number, line) in raw.lines().enumerate() {
        let number = number + 1;
        if line.trim().is_empty() {
            continue;
        }
        let built = serde_json::from_str::<serde_json::Value>(line)
            .map_err(|e| e.to_string())
            .and_then(|value| import_document(&value, mapping, documents.len()));
        match built {
            Ok(doc) => {
                if !seen_ids.insert(doc.id.clone()) {
                    errors.push(LineError {
                        line: number,
                        message: format!("duplicate document id {:?}", doc.id),
                    });
                    continue;
                }
                if let Err(err) = doc.validate(&label_set) {
                    errors.push(LineError {
                        line: number,
                        message: format!("document {:?}: {err}", doc.id),
                    });
                    continue;
                }
                documents.push(doc);
            }
            Err(message) => errors.push(LineError { line: number, message }),
        }
    }

    if !errors.is_empty() {
        return Err(LoadError { path: path.to_path_buf(), lines: errors }.into());
    }
    Corpus::new(documents, label_set, split)
        .map_err(|err| anyhow!("corpus {}: {err}", path.display()))
}

fn import_document(
    value: &serde_json::Value,
    mapping: &MappingProfile,
    ordinal: usize,
) -> std::result::Result<Document, String> {
    let id = match &mapping.id {
        Some(field) => get_str(value, field)?.to_string(),
        None => format!("doc-{:04}", ordinal + 1),
    };

    let token_values = get_array(value, &mapping.tokens)?;
    let mut surfaces = Vec::with_capacity(token_values.len());
    for (i, tv) in token_values.iter().enumerate() {
        let surface = match &mapping.token_text {
            Some(field) => get_str(tv, field)
                .map_err(|e| format!("token {i}: {e}"))?
                .to_string(),
            None => tv
                .as_str()
                .ok_or_else(|| format!("token {i} is not a string"))?
                .to_string(),
        };
        surfaces.push(surface);
    }

    let explicit_offsets = mapping.token_start.is_some() && mapping.token_end.is_some();
    let text = match &mapping.text {
        Some(field) => get_str(value, field)?.to_string(),
        None => surfaces.join(" "),
    };
    let text_chars: Vec<char> = text.chars().collect();

    let mut tokens = Vec::with_capacity(surfaces.len());
    let mut cursor = 0usize;
    for (index, surface) in surfaces.iter().enumerate() {
        let (start, end) = if explicit_offsets {
            let start_field = mapping.token_start.as_deref().unwrap();
            let end_field = mapping.token_end.as_deref().unwrap();
            let tv = &token_values[index];
            (
                get_usize(tv, start_field).map_err(|e| format!("token {index}: {e}"))?,
                get_usize(tv, end_field).map_err(|e| format!("token {index}: {e}"))?,
            )
        } else {
            let start = find_from(&text_chars, surface, cursor).ok_or_else(|| {
                format!("token {index} {surface:?} not found in text after offset {cursor}")
            })?;
            (start, start + surface.chars().count())
        };
        cursor = end;
        tokens.push(Token { index, text: surface.clone(), start, end });
    }

    let raw_labels: Option<Vec<String>> = match &mapping.token_labels {
        Some(field) => Some(
            get_array(value, field)?
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| format!("label {i} is not a string"))
                })
                .collect::<std::result::Result<_, _>>()?,
        ),
        None => None,
    };

    let mut spans = match &mapping.spans {
        Some(field) => import_spans(value, field, mapping)?,
        None => Vec::new(),
    };
    let token_labels = match raw_labels {
        Some(raw) if mapping.bio_labels => {
            if mapping.spans.is_none() {
                spans = spans_from_bio(&raw);
            }
            raw.iter().map(|l| strip_bio(l).to_string()).collect()
        }
        Some(raw) => raw,
        None => labels_from_spans(tokens.len(), &spans),
    };

    Ok(Document { id, text, tokens, token_labels, spans })
}

fn import_spans(
    value: &serde_json::Value,
    field: &str,
    mapping: &MappingProfile,
) -> std::result::Result<Vec<GoldSpan>, String> {
    let start_field = mapping.span_start.as_deref().unwrap_or("start_token");
    let end_field = mapping.span_end.as_deref().unwrap_or("end_token");
    let label_field = mapping.span_label.as_deref().unwrap_or("label");
    get_array(value, field)?
        .iter()
        .enumerate()
        .map(|(i, sv)| {
            let depth = match &mapping.span_depth {
                Some(f) if !sv.get(f.as_str()).map_or(true, |v| v.is_null()) => {
                    get_usize(sv, f).map_err(|e| format!("span {i}: {e}"))? as u32
                }
                _ => 0,
            };
            Ok(GoldSpan {
                start_token: get_usize(sv, start_field).map_err(|e| format!("span {i}: {e}"))?,
                end_token: get_usize(sv, end_field).map_err(|e| format!("span {i}: {e}"))?,
                label: get_str(sv, label_field)
                    .map_err(|e| format!("span {i}: {e}"))?
                    .to_string(),
                depth,
            })
        })
        .collect()
}

/// Derives depth-0 spans from BIO-tagged token labels. A `B-` tag opens a
/// span; an `I-` tag continues one, or opens one when nothing compatible
/// precedes it (lenient IOB1 handling).
fn spans_from_bio(labels: &[String]) -> Vec<GoldSpan> {
    let mut spans: Vec<GoldSpan> = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, raw) in labels.iter().enumerate() {
        let (prefix, label) = match raw.split_once('-') {
            Some((p, l)) if p == "B" || p == "I" => (p, l),
            _ => ("O", raw.as_str()),
        };
        let continues = prefix == "I" && open.as_ref().is_some_and(|(_, l)| l == label);
        if !continues {
            if let Some((start, label)) = open.take() {
                spans.push(GoldSpan::new(start, i, &label, 0));
            }
            if prefix != "O" {
                open = Some((i, label.to_string()));
            }
        }
    }
    if let Some((start, label)) = open {
        spans.push(GoldSpan::new(start, labels.len(), &label, 0));
    }
    spans
}

fn strip_bio(label: &str) -> &str {
    match label.split_once('-') {
        Some((p, rest)) if p == "B" || p == "I" => rest,
        _ => label,
    }
}

fn labels_from_spans(token_count: usize, spans: &[GoldSpan]) -> Vec<String> {
    let mut labels = vec![OUTSIDE_LABEL.to_string(); token_count];
    for span in spans.iter().filter(|s| s.depth == 0) {
        for slot in labels
            .iter_mut()
            .take(span.end_token.min(token_count))
            .skip(span.start_token)
        {
            slot.clone_from(&span.label);
        }
    }
    labels
}

fn find_from(haystack: &[char], needle: &str, from: usize) -> Option<usize> {
    let needle: Vec<char> = needle.chars().collect();
    if needle.is_empty() {
        return None;
    }
    (from..haystack.len().checked_sub(needle.len())?.checked_add(1)?)
        .find(|&i| haystack[i..i + needle.len()] == needle[..])
}

fn get_str<'v>(value: &'v serde_json::Value, field: &str) -> std::result::Result<&'v str, String> {
    value
        .get(field)
        .and_then(|v| v.as_str())
        .ok_or_else(|| format!("field {field:?} missing or not a string"))
}

fn get_usize(value: &serde_json::Value, field: &str) -> std::result::Result<usize, String> {
    value
        .get(field)
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or_else(|| format!("field {field:?} missing or not a non-negative integer"))
}

fn get_array<'v>(
    value: &'v serde_json::Value,
    field: &str,
) -> std::result::Result<&'v Vec<serde_json::Value>, String> {
    value
        .get(field)
        .and_then(|v| v.as_array())
        .ok_or_else(|| format!("field {field:?} missing or not an array"))
}
