//! Sentence splitting and token normalization.
//!
//! A sentence ends at a run of `.`, `!` or `?` (optionally followed by
//! closing quotes or brackets) that is followed by whitespace or the end of
//! the text. A period run does not end a sentence when the word it closes is
//! in [`ABBREVIATIONS`]. Text without any terminator is one sentence.

/// Lower-cased words whose trailing period never ends a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "cf.", "approx.", "dr.", "mr.", "mrs.", "ms.", "prof.", "st.", "jr.", "sr.", "no.",
    "fig.", "u.s.", "a.m.", "p.m.",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];

pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if !matches!(c, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        let run_start = i;
        let mut j = i;
        while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?') {
            j += 1;
        }
        while j < chars.len() && CLOSERS.contains(&chars[j].1) {
            j += 1;
        }
        let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
        let only_periods = chars[run_start..j]
            .iter()
            .all(|&(_, c)| c == '.' || CLOSERS.contains(&c));
        if at_boundary && !(only_periods && ends_with_abbreviation(text, start, chars[run_start].0)) {
            let end = if j == chars.len() { text.len() } else { chars[j].0 };
            push_trimmed(&mut out, &text[start..end]);
            start = end;
        }
        i = j;
    }
    push_trimmed(&mut out, &text[start..]);
    if out.is_empty() && !text.trim().is_empty() {
        out.push(text.trim().to_string());
    }
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// Whether the word ending at byte `dot` (a period) is an abbreviation.
fn ends_with_abbreviation(text: &str, sentence_start: usize, dot: usize) -> bool {
    let head = &text[sentence_start..=dot];
    let word_start = head.rfind(char::is_whitespace).map(|p| p + 1).unwrap_or(0);
    let word = head[word_start..]
        .trim_start_matches(['(', '"', '\'', '\u{201c}'])
        .to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Lower-cased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}
