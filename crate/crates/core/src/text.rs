//! Character-indexed view of a text.
//!
//! Every position in this crate counts Unicode scalar values (`char`s), not
//! bytes. [`TextIndex`] precomputes the byte offset of each character so
//! that slicing and searching by character position stay cheap.

use alloc::vec::Vec;

/// A borrowed text together with a char-to-byte offset table.
#[derive(Debug, Clone)]
pub struct TextIndex<'a> {
    text: &'a str,
    /// `byte_starts[i]` is the byte offset of character `i`; the final
    /// entry is `text.len()`, so the table has `char_len + 1` entries.
    byte_starts: Vec<usize>,
}

impl<'a> TextIndex<'a> {
    pub fn new(text: &'a str) -> Self {
        let mut byte_starts = Vec::with_capacity(text.len() + 1);
        byte_starts.extend(text.char_indices().map(|(b, _)| b));
        byte_starts.push(text.len());
        TextIndex { text, byte_starts }
    }

    pub fn text(&self) -> &'a str {
        self.text
    }

    /// Number of characters in the text.
    pub fn char_len(&self) -> usize {
        self.byte_starts.len() - 1
    }

    /// The substring covering characters `[start, end)`, or `None` when the
    /// interval is empty, inverted, or out of range.
    pub fn slice(&self, start: usize, end: usize) -> Option<&'a str> {
        if start >= end || end > self.char_len() {
            return None;
        }
        Some(&self.text[self.byte_starts[start]..self.byte_starts[end]])
    }

    /// Character start positions of every occurrence of `needle`, in
    /// ascending order. Overlapping occurrences are all reported. An empty
    /// needle yields no occurrences.
    pub fn occurrences(&self, needle: &str) -> Vec<usize> {
        let mut found = Vec::new();
        if needle.is_empty() {
            return found;
        }
        let mut byte = 0;
        let mut char_pos = 0;
        while let Some(rel) = self.text[byte..].find(needle) {
            let at = byte + rel;
            char_pos += self.text[byte..at].chars().count();
            found.push(char_pos);
            // Advance one character so overlapping matches are seen.
            let step = self.text[at..].chars().next().map_or(1, char::len_utf8);
            byte = at + step;
            char_pos += 1;
        }
        found
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_len_counts_scalars_not_bytes() {
        let idx = TextIndex::new("Encyclopédie");
        assert_eq!(idx.char_len(), 12);
        assert_eq!(idx.text().len(), 13);
    }

    #[test]
    fn slice_by_char_positions() {
        let idx = TextIndex::new("l'Encyclopédie");
        assert_eq!(idx.slice(0, 2), Some("l'"));
        assert_eq!(idx.slice(2, 14), Some("Encyclopédie"));
        assert_eq!(idx.slice(2, 15), None);
        assert_eq!(idx.slice(3, 3), None);
        assert_eq!(idx.slice(4, 2), None);
    }

    #[test]
    fn occurrences_reports_char_starts() {
        let idx = TextIndex::new("à Paris, près de Paris");
        assert_eq!(idx.occurrences("Paris"), [2, 17]);
        assert_eq!(idx.occurrences("à"), [0]);
        assert_eq!(idx.occurrences("x"), [0usize; 0]);
        assert_eq!(idx.occurrences(""), [0usize; 0]);
    }

    #[test]
    fn occurrences_handles_overlap() {
        let idx = TextIndex::new("aaaa");
        assert_eq!(idx.occurrences("aa"), [0, 1, 2]);
    }
}
