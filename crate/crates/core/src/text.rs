//! Small text helpers shared across modules.

/// Lowercase, trim, collapse internal whitespace runs to one space.
pub fn normalize_cell(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Lowercased alphanumeric runs.
pub fn alnum_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2026}' | '\u{2013}' | '\u{2014}'
                | '\u{00AB}' | '\u{00BB}' | '\u{3002}' | '\u{FF0C}'
        )
}
