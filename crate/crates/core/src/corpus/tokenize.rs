//! Whitespace + punctuation tokenizer.
//!
//! Words are split on whitespace, then every punctuation or symbol character
//! is detached as its own token. Two exceptions keep common word shapes
//! intact: a hyphen or period sitting between two alphanumerics stays inside
//! the word (`t-shirt`, `3.5`), and an all-uppercase bracket group such as
//! `[IDK]` is a single token so placeholders survive re-tokenization.
//!
//! Every token records its byte range in the source text, which is what lets
//! masking replace spans without touching surrounding bytes.

use super::{CorpusError, Token};

/// Byte range of one token inside the text it was cut from.
pub(crate) type ByteSpan = (usize, usize);

/// Splits `text` into byte spans following the rules above.
pub(crate) fn split_spans(text: &str) -> Vec<ByteSpan> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);

    let mut spans = Vec::new();
    let mut word_start: Option<usize> = None;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            if let Some(s) = word_start.take() {
                spans.push((chars[s].0, pos));
            }
            i += 1;
            continue;
        }
        if c.is_alphanumeric() || is_joiner(&chars, i) {
            if word_start.is_none() {
                word_start = Some(i);
            }
            i += 1;
            continue;
        }
        // punctuation or symbol
        if let Some(s) = word_start.take() {
            spans.push((chars[s].0, pos));
        }
        if let Some(close) = bracket_group_end(&chars, i) {
            spans.push((pos, end_of(close + 1)));
            i = close + 1;
        } else {
            spans.push((pos, end_of(i + 1)));
            i += 1;
        }
    }
    if let Some(s) = word_start {
        spans.push((chars[s].0, text.len()));
    }
    spans
}

fn is_joiner(chars: &[(usize, char)], i: usize) -> bool {
    let c = chars[i].1;
    if c != '-' && c != '.' {
        return false;
    }
    let prev = i.checked_sub(1).map(|p| chars[p].1);
    let next = chars.get(i + 1).map(|&(_, n)| n);
    match (prev, next) {
        (Some(p), Some(n)) if c == '-' => p.is_alphanumeric() && n.is_alphanumeric(),
        (Some(p), Some(n)) => p.is_ascii_digit() && n.is_ascii_digit(),
        _ => false,
    }
}

/// `[ABC]` with at least one uppercase ASCII letter; returns the index of `]`.
fn bracket_group_end(chars: &[(usize, char)], open: usize) -> Option<usize> {
    if chars[open].1 != '[' {
        return None;
    }
    let mut j = open + 1;
    while j < chars.len() && chars[j].1.is_ascii_uppercase() {
        j += 1;
    }
    (j > open + 1 && j < chars.len() && chars[j].1 == ']').then_some(j)
}

/// Tokenizes free text. Indices run 1..=N and no token carries a logprob.
pub fn tokenize(text: &str) -> Result<Vec<Token>, CorpusError> {
    let spans = split_spans(text);
    if spans.is_empty() {
        return Err(CorpusError::EmptyDescription);
    }
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(i, (start, end))| Token {
            surface: text[start..end].to_string(),
            index: i + 1,
            logprob: None,
            start,
            end,
        })
        .collect())
}

/// Rebuilds whitespace-normalized text from tokens: a single space wherever
/// the source had any whitespace between two tokens, nothing otherwise.
pub fn detokenize(raw_text: &str, tokens: &[Token]) -> String {
    let mut out = String::with_capacity(raw_text.len());
    let mut prev_end: Option<usize> = None;
    for tok in tokens {
        if let Some(p) = prev_end {
            if raw_text[p..tok.start].chars().any(char::is_whitespace) {
                out.push(' ');
            }
        }
        out.push_str(&tok.surface);
        prev_end = Some(tok.end);
    }
    out
}
