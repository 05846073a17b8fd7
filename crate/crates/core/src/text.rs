//! Text normalization shared by retrieval, deduplication and containment checks.

use sha2::{Digest, Sha256};

/// Lowercases, drops punctuation and collapses runs of whitespace to a single space.
///
/// Used for passage dedup, duplicate-question detection and answer containment.
/// Articles are kept; the SQuAD-style answer normalization lives in `metrics`.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in tokens(text) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word);
    }
    out
}

/// Normalized whitespace tokens of `text`.
pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// True if the normalized form of `needle` occurs in the normalized form of `haystack`.
///
/// An empty normalized needle never matches.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    let needle = normalize(needle);
    !needle.is_empty() && normalize(haystack).contains(&needle)
}

/// Hex SHA-256 of the exact bytes of `text`.
pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_strips_and_collapses() {
        assert_eq!(normalize("  Hello,   World!\n"), "hello world");
        assert_eq!(normalize("U.S. -- team"), "us team");
        assert_eq!(normalize("!!!"), "");
    }

    #[test]
    fn containment_is_normalized() {
        assert!(contains_normalized("Russia was chosen to host.", "RUSSIA"));
        assert!(contains_normalized("the New York  Yankees.", "new york yankees"));
        assert!(!contains_normalized("anything", "  ?? "));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            content_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
