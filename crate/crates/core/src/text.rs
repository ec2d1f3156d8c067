//! Text normalization shared by interning and tokenization.

/// Lowercases and collapses runs of whitespace to a single space, trimming
/// both ends. Two texts that normalize equal are the same query or product.
pub fn normalize(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for word in lower.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Splits lowercased text into maximal alphanumeric runs. Whitespace and
/// punctuation both act as boundaries and are dropped.
pub fn split_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}
