//! Shared generators for integration tests: French-flavoured random
//! documents with consistent gold annotations.

use nerval::corpus::{Document, GoldSpan};
use nerval::label::{LabelDef, LabelSet, OUTSIDE_LABEL};
use nerval::tokenize::tokenize;
use rand::prelude::*;

pub const WORDS: &[&str] = &[
    "ville", "près", "de", "la", "le", "les", "rivière", "Paris", "Lyon",
    "Seine", "Diderot", "château", "église", "carte", "région", "bourg",
    "l'évêché", "jusqu'à", "Aix-la-Chapelle", "Saint-Denis", "montagne",
    "Gaule", "province", "d'Auvergne", "forêt", "Rhône", "abbaye", "pont",
];

pub const PUNCT: &[&str] = &[",", ".", ";", ":", "(", ")"];

pub fn label_set() -> LabelSet {
    LabelSet::new(vec![
        LabelDef::new("Spatial", "a place name"),
        LabelDef::new("Person", "a person name"),
        LabelDef::new("Misc", "any other proper name"),
    ])
    .unwrap()
}

pub fn random_text<R: Rng>(rng: &mut R, max_words: usize) -> String {
    let count = rng.random_range(1..=max_words);
    let mut text = String::new();
    for i in 0..count {
        if i > 0 {
            text.push(' ');
        }
        text.push_str(WORDS.choose(rng).unwrap());
        if rng.random_bool(0.2) {
            text.push_str(PUNCT.choose(rng).unwrap());
        }
    }
    text
}

/// A document with random non-overlapping depth-0 spans (plus occasional
/// nested depth-1 spans) whose token labels agree with the spans. The
/// result always passes `Document::validate`.
pub fn random_document<R: Rng>(rng: &mut R, id: &str, labels: &LabelSet) -> Document {
    let text = random_text(rng, 14);
    let tokens = tokenize(&text);
    let names: Vec<&str> = labels.names().collect();

    let mut spans: Vec<GoldSpan> = Vec::new();
    let mut at = 0;
    while at < tokens.len() {
        if rng.random_bool(0.35) {
            let len = rng.random_range(1..=3.min(tokens.len() - at));
            let label = *names.choose(rng).unwrap();
            spans.push(GoldSpan::new(at, at + len, label, 0));
            if len > 1 && rng.random_bool(0.3) {
                let inner = *names.choose(rng).unwrap();
                spans.push(GoldSpan::new(at + len - 1, at + len, inner, 1));
            }
            at += len + 1;
        } else {
            at += 1;
        }
    }

    let mut token_labels = vec![OUTSIDE_LABEL.to_string(); tokens.len()];
    for span in spans.iter().filter(|s| s.depth == 0) {
        for slot in &mut token_labels[span.start_token..span.end_token] {
            *slot = span.label.clone();
        }
    }

    Document {
        id: id.to_string(),
        text,
        tokens,
        token_labels,
        spans,
    }
}
