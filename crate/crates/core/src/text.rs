//! Text normalization shared by sequence construction and the lexical scorer.

use std::collections::BTreeSet;

/// Lowercases one code point at a time, keeping the code-point count so span
/// offsets computed on the result are valid on the original text.
pub fn lowercase(s: &str) -> String {
    s.chars()
        .map(|c| {
            let mut lower = c.to_lowercase();
            match (lower.next(), lower.next()) {
                (Some(l), None) => l,
                _ => c,
            }
        })
        .collect()
}

/// Lowercased whitespace tokens with punctuation removed.
pub fn tokens(s: &str) -> Vec<String> {
    let stripped: String = lowercase(s)
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    stripped.split_whitespace().map(str::to_string).collect()
}

pub fn token_set(s: &str) -> BTreeSet<String> {
    tokens(s).into_iter().collect()
}

/// Code-point offset of the first case-insensitive occurrence of `needle`.
pub fn find_ignore_case(haystack: &str, needle: &str) -> Option<(usize, usize)> {
    if needle.is_empty() {
        return None;
    }
    let hay = lowercase(haystack);
    let pat = lowercase(needle);
    let byte = hay.find(&pat)?;
    let start = hay[..byte].chars().count();
    Some((start, start + pat.chars().count()))
}

pub fn contains_ignore_case(haystack: &str, needle: &str) -> bool {
    find_ignore_case(haystack, needle).is_some()
}

/// Lowercase with runs of whitespace collapsed to one space.
pub fn normalize_value(s: &str) -> String {
    lowercase(s).split_whitespace().collect::<Vec<_>>().join(" ")
}
