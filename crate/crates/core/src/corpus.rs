//! Annotated documents and corpora.
//!
//! A [`Document`] carries its raw text, a tokenization with character
//! offsets, one label per token, and labelled token spans. Spans have a
//! `depth` so that nested annotations can be stored; depth 0 is the outer
//! layer, and the per-token labels always describe exactly that layer.
//!
//! All character positions count Unicode scalar values, all intervals are
//! half-open.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::label::{LabelSet, OUTSIDE_LABEL};
use crate::text::TextIndex;

/// One token: its surface text and the character interval it covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// 0-based position of the token in its document.
    pub index: usize,
    pub text: String,
    /// Character offset of the first character, inclusive.
    pub start: usize,
    /// Character offset one past the last character, exclusive.
    pub end: usize,
}

/// A gold entity annotation over a token interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSpan {
    /// First token of the span, inclusive.
    pub start_token: usize,
    /// One past the last token, exclusive.
    pub end_token: usize,
    pub label: String,
    /// Nesting depth; 0 is the outermost annotation layer.
    #[serde(default)]
    pub depth: u32,
}

impl GoldSpan {
    pub fn new(start_token: usize, end_token: usize, label: &str, depth: u32) -> Self {
        GoldSpan {
            start_token,
            end_token,
            label: label.to_string(),
            depth,
        }
    }

    /// Token overlap with another span, ignoring depth and label.
    pub fn overlaps(&self, other: &GoldSpan) -> bool {
        self.start_token < other.end_token && other.start_token < self.end_token
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    /// Exactly one label per token: an entity class or [`OUTSIDE_LABEL`].
    pub token_labels: Vec<String>,
    pub spans: Vec<GoldSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DocumentError {
    #[error("document {doc_id:?}: {labels} token labels for {tokens} tokens")]
    TokenLabelCount {
        doc_id: String,
        tokens: usize,
        labels: usize,
    },
    #[error("document {doc_id:?}, token {index}: {reason}")]
    BadToken {
        doc_id: String,
        index: usize,
        reason: String,
    },
    #[error("document {doc_id:?}, token {index}: unknown label {label:?}")]
    UnknownTokenLabel {
        doc_id: String,
        index: usize,
        label: String,
    },
    #[error("document {doc_id:?}, span [{start_token}, {end_token}): {reason}")]
    BadSpan {
        doc_id: String,
        start_token: usize,
        end_token: usize,
        reason: String,
    },
    #[error(
        "document {doc_id:?}: token {index} is labelled {token_label:?} but the \
         depth-0 spans require {expected:?}"
    )]
    LabelSpanMismatch {
        doc_id: String,
        index: usize,
        token_label: String,
        expected: String,
    },
    #[error(
        "document {doc_id:?}: depth-0 spans [{a_start}, {a_end}) and [{b_start}, {b_end}) overlap"
    )]
    OverlappingSpans {
        doc_id: String,
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
}

impl Document {
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Character extent `[start, end)` of the token interval, or `None`
    /// when the interval is empty or out of range.
    pub fn token_interval_chars(&self, start_token: usize, end_token: usize) -> Option<(usize, usize)> {
        if start_token >= end_token || end_token > self.tokens.len() {
            return None;
        }
        Some((self.tokens[start_token].start, self.tokens[end_token - 1].end))
    }

    /// Checks internal consistency: token offsets against the text, label
    /// counts, span bounds, known labels, and agreement between the
    /// per-token labels and the depth-0 spans.
    pub fn validate(&self, labels: &LabelSet) -> Result<(), DocumentError> {
        let bad_token = |index: usize, reason: &str| DocumentError::BadToken {
            doc_id: self.id.clone(),
            index,
            reason: reason.to_string(),
        };
        let index = TextIndex::new(&self.text);
        let mut prev_end = 0;
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.index != i {
                return Err(bad_token(i, "stored index does not match position"));
            }
            if tok.start >= tok.end {
                return Err(bad_token(i, "empty or inverted character interval"));
            }
            if i > 0 && tok.start < prev_end {
                return Err(bad_token(i, "overlaps the previous token"));
            }
            prev_end = tok.end;
            match index.slice(tok.start, tok.end) {
                Some(s) if s == tok.text => {}
                Some(_) => return Err(bad_token(i, "text does not match the character interval")),
                None => return Err(bad_token(i, "character interval out of range")),
            }
        }

        if self.token_labels.len() != self.tokens.len() {
            return Err(DocumentError::TokenLabelCount {
                doc_id: self.id.clone(),
                tokens: self.tokens.len(),
                labels: self.token_labels.len(),
            });
        }
        for (i, label) in self.token_labels.iter().enumerate() {
            if label != OUTSIDE_LABEL && !labels.contains(label) {
                return Err(DocumentError::UnknownTokenLabel {
                    doc_id: self.id.clone(),
                    index: i,
                    label: label.clone(),
                });
            }
        }

        for span in &self.spans {
            let bad_span = |reason: &str| DocumentError::BadSpan {
                doc_id: self.id.clone(),
                start_token: span.start_token,
                end_token: span.end_token,
                reason: reason.to_string(),
            };
            if span.start_token >= span.end_token {
                return Err(bad_span("empty or inverted token interval"));
            }
            if span.end_token > self.tokens.len() {
                return Err(bad_span("token interval out of range"));
            }
            if !labels.contains(&span.label) {
                return Err(bad_span(&alloc::format!("unknown label {:?}", span.label)));
            }
        }

        self.check_depth0_agreement()
    }

    fn check_depth0_agreement(&self) -> Result<(), DocumentError> {
        let depth0: Vec<&GoldSpan> = self.spans.iter().filter(|s| s.depth == 0).collect();
        for (i, a) in depth0.iter().enumerate() {
            for b in &depth0[i + 1..] {
                if a.overlaps(b) {
                    return Err(DocumentError::OverlappingSpans {
                        doc_id: self.id.clone(),
                        a_start: a.start_token,
                        a_end: a.end_token,
                        b_start: b.start_token,
                        b_end: b.end_token,
                    });
                }
            }
        }

        let mut expected: Vec<&str> = alloc::vec![OUTSIDE_LABEL; self.tokens.len()];
        for span in &depth0 {
            for slot in &mut expected[span.start_token..span.end_token] {
                *slot = &span.label;
            }
        }
        for (i, (have, want)) in self.token_labels.iter().zip(&expected).enumerate() {
            if have != want {
                return Err(DocumentError::LabelSpanMismatch {
                    doc_id: self.id.clone(),
                    index: i,
                    token_label: have.clone(),
                    expected: (*want).to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Keeps only the outermost annotation layer: spans with depth > 0 are
/// dropped. Fails if the depth-0 spans overlap, since a flat layer cannot
/// represent that.
pub fn flatten_nested(doc: &Document) -> Result<Document, DocumentError> {
    let mut flat = doc.clone();
    flat.spans.retain(|s| s.depth == 0);
    let spans = flat.spans.clone();
    for (i, a) in spans.iter().enumerate() {
        for b in &spans[i + 1..] {
            if a.overlaps(b) {
                return Err(DocumentError::OverlappingSpans {
                    doc_id: doc.id.clone(),
                    a_start: a.start_token,
                    a_end: a.end_token,
                    b_start: b.start_token,
                    b_end: b.end_token,
                });
            }
        }
    }
    Ok(flat)
}

/// Which portion of a dataset a corpus file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub label_set: LabelSet,
    pub split: Split,
}

impl Corpus {
    /// Builds a corpus after validating every document and checking id
    /// uniqueness.
    pub fn new(documents: Vec<Document>, label_set: LabelSet, split: Split) -> Result<Self, DocumentError> {
        for (i, doc) in documents.iter().enumerate() {
            doc.validate(&label_set)?;
            if documents[..i].iter().any(|d| d.id == doc.id) {
                return Err(DocumentError::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Corpus {
            documents,
            label_set,
            split,
        })
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExemplarError {
    #[error("corpus has no documents")]
    EmptyCorpus,
    #[error(
        "no document annotates every label; best candidate {best_id:?} still misses {missing:?}"
    )]
    NoCoveringDocument { best_id: String, missing: Vec<String> },
    #[error("exemplar document {0:?} not found in the corpus")]
    UnknownDocument(String),
    #[error("exemplar document {doc_id:?} does not annotate {missing:?}")]
    MissingLabels { doc_id: String, missing: Vec<String> },
}

fn missing_labels(doc: &Document, labels: &LabelSet) -> Vec<String> {
    labels
        .names()
        .filter(|name| {
            !doc.spans
                .iter()
                .any(|s| s.depth == 0 && s.label == *name)
        })
        .map(String::from)
        .collect()
}

/// Picks the exemplar shown to the model in every prompt: the first
/// document whose depth-0 spans cover every label in the tagset. When no
/// document qualifies, the error names the labels missing from the closest
/// candidate.
pub fn select_exemplar(corpus: &Corpus) -> Result<&Document, ExemplarError> {
    if corpus.documents.is_empty() {
        return Err(ExemplarError::EmptyCorpus);
    }
    let mut best: Option<(&Document, Vec<String>)> = None;
    for doc in &corpus.documents {
        let missing = missing_labels(doc, &corpus.label_set);
        if missing.is_empty() {
            return Ok(doc);
        }
        let better = match &best {
            Some((_, best_missing)) => missing.len() < best_missing.len(),
            None => true,
        };
        if better {
            best = Some((doc, missing));
        }
    }
    let (doc, missing) = best.expect("non-empty corpus has a best candidate");
    Err(ExemplarError::NoCoveringDocument {
        best_id: doc.id.clone(),
        missing,
    })
}

/// Uses a caller-chosen exemplar, enforcing the same coverage rule as
/// [`select_exemplar`].
pub fn select_exemplar_by_id<'a>(corpus: &'a Corpus, id: &str) -> Result<&'a Document, ExemplarError> {
    let doc = corpus
        .get(id)
        .ok_or_else(|| ExemplarError::UnknownDocument(id.to_string()))?;
    let missing = missing_labels(doc, &corpus.label_set);
    if missing.is_empty() {
        Ok(doc)
    } else {
        Err(ExemplarError::MissingLabels {
            doc_id: id.to_string(),
            missing,
        })
    }
}
