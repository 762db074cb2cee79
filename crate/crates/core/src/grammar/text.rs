//! Text clean-up shared by command matching and keyword extraction.

/// Sentence punctuation the speech layer or a typist may leave around an
/// answer, in both scripts.
const EDGE_PUNCTUATION: &[char] = &[
    '.', ',', '!', '?', ';', ':', '"', '\'', '。', '、', '！', '？', '「', '」', '『', '』', '・',
    '…', '～', '〜',
];

fn is_edge(c: char) -> bool {
    c.is_whitespace() || EDGE_PUNCTUATION.contains(&c)
}

/// Collapses whitespace and trims surrounding punctuation. Case is kept;
/// comparisons fold case separately. If only punctuation remains, the
/// whitespace-collapsed input is returned so that content is never lost.
pub fn normalize(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let trimmed = collapsed.trim_matches(is_edge);
    if trimmed.is_empty() {
        collapsed
    } else {
        trimmed.to_string()
    }
}

/// Removes `pattern` (already lowercase) from the front of `text`,
/// returning the trimmed remainder. Latin patterns must end on a word
/// boundary. Never yields an empty remainder.
pub(crate) fn strip_prefix_ci<'a>(text: &'a str, pattern: &str) -> Option<&'a str> {
    let n = pattern.chars().count();
    let split = text.char_indices().nth(n).map_or(text.len(), |(i, _)| i);
    let (head, rest) = text.split_at(split);
    if head.chars().count() != n || head.to_lowercase() != pattern {
        return None;
    }
    let needs_boundary = pattern
        .chars()
        .last()
        .is_some_and(|c| c.is_ascii_alphanumeric());
    if needs_boundary && rest.chars().next().is_some_and(|c| c.is_alphanumeric()) {
        return None;
    }
    let rest = rest.trim_start_matches(is_edge);
    (!rest.is_empty()).then_some(rest)
}

/// Mirror of [`strip_prefix_ci`] for the end of `text`.
pub(crate) fn strip_suffix_ci<'a>(text: &'a str, pattern: &str) -> Option<&'a str> {
    let n = pattern.chars().count();
    let total = text.chars().count();
    if total < n {
        return None;
    }
    let split = text
        .char_indices()
        .nth(total - n)
        .map_or(text.len(), |(i, _)| i);
    let (rest, tail) = text.split_at(split);
    if tail.to_lowercase() != pattern {
        return None;
    }
    let needs_boundary = pattern
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphanumeric());
    if needs_boundary && rest.chars().last().is_some_and(|c| c.is_alphanumeric()) {
        return None;
    }
    let rest = rest.trim_end_matches(is_edge);
    (!rest.is_empty()).then_some(rest)
}
