use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Lowercase, compose to NFC and collapse whitespace. Diacritics are kept.
pub fn normalize_text(raw: &str) -> String {
    let lowered: String = raw.nfc().collect::<String>().to_lowercase();
    clean_text(&lowered)
}

/// NFC composition and whitespace collapse with case kept. This is the form
/// stored in chunks and FAQ entries; matching goes through [`normalize_text`].
pub fn clean_text(raw: &str) -> String {
    let composed: String = raw.nfc().collect();
    let mut out = String::with_capacity(composed.len());
    for word in composed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Accent-insensitive key used only for matching user spellings such as
/// "Quang Tri" against "Quảng Trị". Never used for indexed text.
pub fn fold_diacritics(text: &str) -> String {
    normalize_text(text)
        .nfd()
        .filter(|c| !is_combining_mark(*c))
        .map(|c| if c == 'đ' { 'd' } else { c })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn whitespace_and_case() {
        assert_eq!(normalize_text("  Hello   WORLD "), "hello world");
        assert_eq!(normalize_text("a\t\nb"), "a b");
        assert_eq!(normalize_text(""), "");
    }

    #[test]
    fn keeps_vietnamese_diacritics() {
        assert_eq!(normalize_text("ĐIỂM Chuẩn"), "điểm chuẩn");
        assert_eq!(clean_text("  ĐIỂM   Chuẩn "), "ĐIỂM Chuẩn");
    }

    #[test]
    fn composes_decomposed_input() {
        let decomposed = "e\u{0301}";
        let out = normalize_text(decomposed);
        assert_eq!(out, "é");
        assert_eq!(out.chars().count(), 1);
    }

    #[test]
    fn folding_strips_marks() {
        assert_eq!(fold_diacritics("Quảng Trị"), "quang tri");
        assert_eq!(fold_diacritics("Đà Nẵng"), "da nang");
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,64}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }
    }
}
