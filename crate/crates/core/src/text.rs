//! Token normalization shared by the test embedder, TF-IDF and lexical matching.

/// Splits text into lowercase alphanumeric tokens.
///
/// Apostrophes are dropped without splitting (`I'm` becomes `im`); every other
/// non-alphanumeric character is a separator.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if ch == '\'' || ch == '\u{2019}' {
            continue;
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Strips one of the suffixes `ing`, `ed`, `s` when a stem of at least three
/// characters remains. Words ending in `ss`, `us` or `is` keep their `s`.
///
/// This is a stand-in for lemmatization, not a real stemmer.
pub fn light_stem(token: &str) -> String {
    let len = token.chars().count();
    for suffix in ["ing", "ed"] {
        if token.ends_with(suffix) && len - suffix.len() >= 3 {
            return token[..token.len() - suffix.len()].to_string();
        }
    }
    if token.ends_with('s')
        && len > 3
        && !(token.ends_with("ss") || token.ends_with("us") || token.ends_with("is"))
    {
        return token[..token.len() - 1].to_string();
    }
    token.to_string()
}

/// Tokenizes and stems; the term stream TF-IDF counts over.
pub fn terms(text: &str) -> Vec<String> {
    tokenize(text).iter().map(|t| light_stem(t)).collect()
}
