//! Unicode normalisation shared by answer matching, metrics and link lookup.

use unicode_normalization::UnicodeNormalization;

/// NFKC-normalises `s`.
pub fn nfkc(s: &str) -> String {
    s.nfkc().collect()
}

/// Canonical form used for answer equality.
///
/// NFKC, lowercase, leading/trailing whitespace and ASCII punctuation
/// removed, internal whitespace runs collapsed to one space. Idempotent.
pub fn normalize_answer(s: &str) -> String {
    let folded = nfkc(s).to_lowercase();
    let trimmed = folded.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Key used to match link-table titles: NFKC plus outer whitespace trim.
pub fn title_key(s: &str) -> String {
    nfkc(s).trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_case_space_and_punctuation() {
        assert_eq!(normalize_answer("  Ron \t Paul "), "ron paul");
        assert_eq!(normalize_answer("1957."), "1957");
        assert_eq!(normalize_answer("\"Biology\","), "biology");
        assert_eq!(normalize_answer("..."), "");
    }

    #[test]
    fn nfkc_folds_fullwidth_digits() {
        assert_eq!(normalize_answer("１９５７"), "1957");
        assert_eq!(title_key(" ＡＢ "), "AB");
    }

    #[test]
    fn idempotent_on_mixed_input() {
        for s in ["a . b", " - x - ", "Ｆｏｏ  Bar!", "ダグラス・アダムズ", ". , ;"] {
            let once = normalize_answer(s);
            assert_eq!(normalize_answer(&once), once, "{s:?}");
        }
    }
}
