//! Deterministic tokenizer with character offsets.
//!
//! Rules, applied in order to each maximal run of non-whitespace
//! characters:
//!
//! 1. Leading punctuation or symbol characters split off as single-char
//!    tokens, as does trailing punctuation (so `"(Paris)."` yields `(`,
//!    `Paris`, `)`, `.`).
//! 2. The remainder splits once after the first elision apostrophe: an
//!    `'` or `’` with an alphabetic character on both sides. The
//!    apostrophe stays with the prefix, so `"l'Encyclopédie"` yields `l'`
//!    and `Encyclopédie`. Later apostrophes are left alone.
//! 3. Whatever remains is one token. Interior punctuation such as hyphens
//!    never splits.
//!
//! Punctuation means Unicode general categories P* and S*. Offsets count
//! characters, not bytes.

use alloc::string::String;
use alloc::vec::Vec;

use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::corpus::Token;

fn is_punct(c: char) -> bool {
    matches!(
        c.general_category_group(),
        GeneralCategoryGroup::Punctuation | GeneralCategoryGroup::Symbol
    )
}

fn is_elision_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Splits `text` into tokens carrying character offsets. Tokenizing an
/// empty or all-whitespace text yields no tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens: Vec<Token> = Vec::new();
    let push = |tokens: &mut Vec<Token>, start: usize, end: usize| {
        tokens.push(Token {
            index: tokens.len(),
            text: chars[start..end].iter().collect::<String>(),
            start,
            end,
        });
    };

    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && !chars[j].is_whitespace() {
            j += 1;
        }

        // Peel leading punctuation.
        let mut left = i;
        while left < j && is_punct(chars[left]) {
            push(&mut tokens, left, left + 1);
            left += 1;
        }
        // Mark trailing punctuation, emitted after the body.
        let mut right = j;
        while right > left && is_punct(chars[right - 1]) {
            right -= 1;
        }

        if left < right {
            let split = (left + 1..right.saturating_sub(1))
                .find(|&k| {
                    is_elision_apostrophe(chars[k])
                        && chars[k - 1].is_alphabetic()
                        && chars[k + 1].is_alphabetic()
                })
                .map(|k| k + 1);
            match split {
                Some(mid) => {
                    push(&mut tokens, left, mid);
                    push(&mut tokens, mid, right);
                }
                None => push(&mut tokens, left, right),
            }
        }

        for k in right..j {
            push(&mut tokens, k, k + 1);
        }
        i = j;
    }
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AlignError {
    #[error("character interval [{start}, {end}) is empty or inverted")]
    InvalidInterval { start: usize, end: usize },
    #[error("character interval ends at {end} but the text has {len} characters")]
    OutOfRange { end: usize, len: usize },
}

/// Maps a character interval onto the token interval with exactly the same
/// extent. Returns `Ok(None)` when no token boundary coincides with one of
/// the endpoints, i.e. the interval cuts through a token.
///
/// `text_char_len` is the character count of the text the tokens came
/// from; intervals reaching past it are errors rather than misalignments.
pub fn align_span(
    tokens: &[Token],
    text_char_len: usize,
    start_char: usize,
    end_char: usize,
) -> Result<Option<(usize, usize)>, AlignError> {
    if start_char >= end_char {
        return Err(AlignError::InvalidInterval {
            start: start_char,
            end: end_char,
        });
    }
    if end_char > text_char_len {
        return Err(AlignError::OutOfRange {
            end: end_char,
            len: text_char_len,
        });
    }
    let first = match tokens.binary_search_by_key(&start_char, |t| t.start) {
        Ok(i) => i,
        Err(_) => return Ok(None),
    };
    let last = match tokens.binary_search_by_key(&end_char, |t| t.end) {
        Ok(i) => i,
        Err(_) => return Ok(None),
    };
    if first <= last {
        Ok(Some((first, last + 1)))
    } else {
        Ok(None)
    }
}
