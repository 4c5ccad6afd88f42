//! Text normalization: lowercasing, punctuation stripping, simple plural
//! reduction, and the default stopword list.

use std::collections::BTreeSet;

/// Tokenize and normalize free text.
///
/// Lowercases, splits on anything that is not ASCII alphanumeric, and
/// reduces simple plurals ("socks" -> "sock", "shoes" -> "shoe"). Words that
/// end in "ss" are left alone.
pub fn normalize_text(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(singularize)
        .collect()
}

fn singularize(word: &str) -> String {
    if word.len() > 2 && word.ends_with('s') && !word.ends_with("ss") {
        word[..word.len() - 1].to_string()
    } else {
        word.to_string()
    }
}

/// The built-in English stopword list. Deliberately small; callers can
/// replace it with a file-based list.
pub fn default_stopwords() -> BTreeSet<String> {
    // Entries are stored post-normalization ("has" -> "ha", "this" -> "thi").
    [
        "a", "an", "and", "are", "at", "be", "but", "by", "for", "from", "ha", "had", "hi",
        "have", "in", "into", "i", "it", "not", "of", "on", "or", "s", "such", "t", "that",
        "the", "their", "then", "there", "these", "they", "thi", "to", "wa", "was", "were",
        "will", "with", "you", "your",
    ]
    .into_iter()
    .map(str::to_string)
    .collect()
}

/// Load a stopword file (one word per line); the words are normalized with
/// the same tokenizer so that matching is consistent.
pub fn load_stopwords(content: &str) -> BTreeSet<String> {
    content
        .lines()
        .flat_map(normalize_text)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plural_examples() {
        assert_eq!(normalize_text("Athletic Socks"), vec!["athletic", "sock"]);
        assert_eq!(normalize_text("Shoes"), vec!["shoe"]);
        assert_eq!(normalize_text("CDs & Vinyl"), vec!["cd", "vinyl"]);
        // double-s words keep their suffix
        assert_eq!(normalize_text("dress"), vec!["dress"]);
    }

    #[test]
    fn punctuation_and_case() {
        assert_eq!(normalize_text("Great socks!"), vec!["great", "sock"]);
        assert_eq!(normalize_text("!!!"), Vec::<String>::new());
        assert_eq!(
            normalize_text("Casio Men's MQ24-1E"),
            vec!["casio", "men", "s", "mq24", "1e"]
        );
    }

    #[test]
    fn stopword_file_roundtrip() {
        let set = load_stopwords("the\nAnd\n\nwith");
        assert!(set.contains("the"));
        assert!(set.contains("and"));
        assert!(set.contains("with"));
        assert_eq!(set.len(), 3);
    }
}
