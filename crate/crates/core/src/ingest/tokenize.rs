use unicode_normalization::char::is_combining_mark;

/// A token with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// Splits normalized text into tokens.
///
/// One implementation is shared by chunk accounting, BM25 and Jaccard
/// deduplication so that token counts agree everywhere. A language-specific
/// word segmenter can be plugged in by implementing this trait.
pub trait Tokenizer: Send + Sync {
    fn tokenize_spans<'a>(&self, text: &'a str) -> Vec<Token<'a>>;

    fn tokenize(&self, text: &str) -> Vec<String> {
        self.tokenize_spans(text)
            .into_iter()
            .map(|t| t.text.to_string())
            .collect()
    }
}

/// Whitespace split, with every punctuation or symbol character emitted as a
/// standalone token.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimpleTokenizer;

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

impl Tokenizer for SimpleTokenizer {
    fn tokenize_spans<'a>(&self, text: &'a str) -> Vec<Token<'a>> {
        let mut tokens = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if is_word_char(c) {
                word_start.get_or_insert(i);
                continue;
            }
            if let Some(s) = word_start.take() {
                tokens.push(Token { text: &text[s..i], start: s, end: i });
            }
            if !c.is_whitespace() {
                let end = i + c.len_utf8();
                tokens.push(Token { text: &text[i..end], start: i, end });
            }
        }
        if let Some(s) = word_start {
            tokens.push(Token { text: &text[s..], start: s, end: text.len() });
        }
        tokens
    }
}

/// Convenience wrapper over [`SimpleTokenizer`].
pub fn tokenize(text: &str) -> Vec<String> {
    SimpleTokenizer.tokenize(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(tokenize("điểm chuẩn 2025?"), ["điểm", "chuẩn", "2025", "?"]);
        assert_eq!(tokenize("kv2-nt, 25.5"), ["kv2", "-", "nt", ",", "25", ".", "5"]);
    }

    #[test]
    fn empty_and_repeated_spaces() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a  b"), ["a", "b"]);
    }

    proptest! {
        #[test]
        fn spans_index_source(s in "\\PC{0,80}") {
            for t in SimpleTokenizer.tokenize_spans(&s) {
                prop_assert_eq!(&s[t.start..t.end], t.text);
                prop_assert!(!t.text.is_empty());
                prop_assert!(!t.text.chars().any(char::is_whitespace));
            }
        }
    }
}
