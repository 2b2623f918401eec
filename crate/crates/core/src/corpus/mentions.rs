use serde::{Deserialize, Serialize};

use super::{ObjectVocabulary, TokenizedDescription};

/// One occurrence of a vocabulary object in a description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMention {
    pub canonical: String,
    /// Matched text, exactly as it appears in the description.
    pub surface: String,
    /// 1-based index of the first token of the match, `Index(o)`.
    pub token_index: usize,
    /// Inclusive 1-based token range.
    pub token_span: (usize, usize),
    /// `-log p` of the first token of the span, when logprobs exist.
    pub uncertainty: Option<f64>,
}

/// Greedy longest-match scan, left to right, case-insensitive.
///
/// Each token belongs to at most one mention. Repeated objects produce one
/// mention per occurrence.
pub fn extract_mentions(desc: &TokenizedDescription, vocab: &ObjectVocabulary) -> Vec<ObjectMention> {
    let lowered: Vec<String> = desc.tokens.iter().map(|t| t.surface.to_lowercase()).collect();
    let max_len = vocab.max_surface_len();
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < lowered.len() {
        let longest = max_len.min(lowered.len() - i);
        let hit = (1..=longest)
            .rev()
            .find_map(|len| vocab.canonical_for_tokens(&lowered[i..i + len]).map(|c| (len, c)));
        match hit {
            Some((len, canonical)) => {
                let first = &desc.tokens[i];
                let last = &desc.tokens[i + len - 1];
                mentions.push(ObjectMention {
                    canonical: canonical.to_string(),
                    surface: desc.raw_text[first.start..last.end].to_string(),
                    token_index: first.index,
                    token_span: (first.index, last.index),
                    uncertainty: first.logprob.map(|lp| 0.0 - lp),
                });
                i += len;
            }
            None => i += 1,
        }
    }
    mentions
}
