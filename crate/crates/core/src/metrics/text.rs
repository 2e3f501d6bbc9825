//! Shared tokenization and the suffix stemmer used for loose matching.

/// Lowercases and splits into maximal alphanumeric runs; everything else is
/// a separator and is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

const SUFFIXES: [&str; 5] = ["ing", "ed", "ly", "es", "s"];

/// Crude suffix stemmer: strips the first matching suffix when at least
/// three characters remain. Tried in order, longest first, one pass.
pub fn stem(token: &str) -> String {
    for suffix in SUFFIXES {
        if let Some(rest) = token.strip_suffix(suffix) {
            if rest.chars().count() >= 3 {
                return rest.to_string();
            }
        }
    }
    token.to_string()
}
