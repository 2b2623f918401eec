//! Caption corpora, annotations and the object vocabulary.
//!
//! A caption is held as a [`TokenizedDescription`]: the raw text plus an
//! ordered list of [`Token`]s, each optionally carrying the natural-log
//! probability the generating model assigned to it. Objects are found by
//! [`extract_mentions`], a greedy longest-match scan against an
//! [`ObjectVocabulary`].

mod load;
mod mentions;
mod tokenize;
mod vocab;

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::PathBuf;

pub use load::{load_annotations, load_caption_corpus, parse_annotations, parse_caption_corpus};
pub use mentions::{extract_mentions, ObjectMention};
pub use tokenize::{detokenize, tokenize};
pub use vocab::ObjectVocabulary;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate image_id `{image_id}`")]
    DuplicateImageId { line: usize, image_id: String },
    #[error("image `{image_id}`: token list does not align with text: {detail}")]
    Alignment { image_id: String, detail: String },
    #[error("image `{image_id}`: token {index} has invalid logprob {value} (must be finite and <= 0)")]
    InvalidLogprob { image_id: String, index: usize, value: f64 },
    #[error("description is empty or whitespace only")]
    EmptyDescription,
    #[error("image `{image_id}`: description is empty or whitespace only")]
    EmptyCaption { image_id: String },
    #[error("image `{image_id}`: unknown object label(s) {labels:?}")]
    UnknownLabels { image_id: String, labels: Vec<String> },
    #[error("vocabulary line {line}: synonym `{surface}` claimed by both `{first}` and `{second}`")]
    VocabularyConflict {
        line: usize,
        surface: String,
        first: String,
        second: String,
    },
    #[error("vocabulary line {line}: canonical label `{label}` declared twice")]
    DuplicateCanonical { line: usize, label: String },
    #[error("vocabulary line {line}: {message}")]
    VocabularySyntax { line: usize, message: String },
    #[error("vocabulary has no entries")]
    EmptyVocabulary,
}

/// One token `z_i` of a description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// 1-based position within the description.
    pub index: usize,
    /// Natural log of the generation probability, when the producer supplied it.
    pub logprob: Option<f64>,
    /// Byte offsets of the surface inside the owning description's raw text.
    pub start: usize,
    pub end: usize,
}

/// A caption `s = {z_1, …, z_{N_s}}` for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedDescription {
    pub image_id: String,
    pub raw_text: String,
    pub tokens: Vec<Token>,
}

impl TokenizedDescription {
    /// Tokenizes plain text; no logprobs.
    pub fn from_text(image_id: impl Into<String>, text: impl Into<String>) -> Result<Self, CorpusError> {
        let image_id = image_id.into();
        let raw_text = text.into();
        let tokens = tokenize(&raw_text).map_err(|_| CorpusError::EmptyCaption {
            image_id: image_id.clone(),
        })?;
        Ok(Self {
            image_id,
            raw_text,
            tokens,
        })
    }

    /// Builds a description from producer-supplied tokens, used verbatim.
    ///
    /// Surfaces are trimmed and must appear in `raw_text` in order, separated
    /// only by whitespace, and together cover every non-whitespace byte.
    /// Whitespace-only tokens are dropped.
    pub fn from_tokens(
        image_id: impl Into<String>,
        text: impl Into<String>,
        tokens: impl IntoIterator<Item = (String, Option<f64>)>,
    ) -> Result<Self, CorpusError> {
        let image_id = image_id.into();
        let raw_text = text.into();
        let misaligned = |detail: String| CorpusError::Alignment {
            image_id: image_id.clone(),
            detail,
        };

        let mut out = Vec::new();
        let mut cursor = 0usize;
        for (surface, logprob) in tokens {
            let trimmed = surface.trim();
            if trimmed.is_empty() {
                continue;
            }
            let index = out.len() + 1;
            if let Some(lp) = logprob {
                if !lp.is_finite() || lp > 0.0 {
                    return Err(CorpusError::InvalidLogprob {
                        image_id: image_id.clone(),
                        index,
                        value: lp,
                    });
                }
            }
            let rest = &raw_text[cursor..];
            let skipped = rest.len() - rest.trim_start().len();
            let start = cursor + skipped;
            if !raw_text[start..].starts_with(trimmed) {
                let found: String = raw_text[start..].chars().take(trimmed.chars().count().max(1)).collect();
                return Err(misaligned(format!(
                    "token {index} `{trimmed}` does not match text at byte {start} (`{found}`)"
                )));
            }
            let end = start + trimmed.len();
            out.push(Token {
                surface: trimmed.to_string(),
                index,
                logprob,
                start,
                end,
            });
            cursor = end;
        }
        if !raw_text[cursor..].trim().is_empty() {
            return Err(misaligned(format!(
                "text after the last token is not covered: `{}`",
                raw_text[cursor..].trim()
            )));
        }
        if out.is_empty() {
            return Err(CorpusError::EmptyCaption { image_id });
        }
        Ok(Self {
            image_id,
            raw_text,
            tokens: out,
        })
    }

    /// `N_s`, the token count.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_logprobs(&self) -> bool {
        self.tokens.iter().any(|t| t.logprob.is_some())
    }

    pub fn normalized_text(&self) -> String {
        detokenize(&self.raw_text, &self.tokens)
    }
}

/// Ground-truth objects of one image, folded to canonical labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub image_id: String,
    pub ground_truth: BTreeSet<String>,
}
