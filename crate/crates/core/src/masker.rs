//! `[IDK]` placeholder masking.
//!
//! A mention is masked when its uncertainty `-log p` is at least `gamma`, or
//! when its token index is at least `eta * Length`. Masking replaces the
//! mention's byte range with the placeholder and records what was there, so
//! [`unmask`] can restore the original text exactly.

use serde::{Deserialize, Serialize};

use crate::corpus::{extract_mentions, ObjectMention, ObjectVocabulary, TokenizedDescription};

pub const DEFAULT_PLACEHOLDER: &str = "[IDK]";
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_ETA: f64 = 0.8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MaskError {
    #[error("invalid mask policy: {0}")]
    InvalidPolicy(String),
    #[error("mask decisions overlap at tokens {first:?} and {second:?}")]
    Overlap {
        first: (usize, usize),
        second: (usize, usize),
    },
    #[error("mask span {span:?} is outside a description of {len} tokens")]
    OutOfBounds { span: (usize, usize), len: usize },
    #[error("masked text is corrupt: {0}")]
    Corrupt(String),
    #[error("caption to mask is empty")]
    EmptyCaption,
}

/// Which length `Index(o)` is compared against when masking a training
/// caption: the caption being masked, or the generated description the
/// objects and indices come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionLengthSource {
    #[default]
    Caption,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    /// Uncertainty threshold: mask when `-log p >= gamma`.
    pub gamma: f64,
    /// Position threshold: mask when `index >= eta * length`.
    pub eta: f64,
    pub placeholder: String,
    #[serde(default)]
    pub position_length_source: PositionLengthSource,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            eta: DEFAULT_ETA,
            placeholder: DEFAULT_PLACEHOLDER.to_string(),
            position_length_source: PositionLengthSource::Caption,
        }
    }
}

impl MaskPolicy {
    pub fn new(gamma: f64, eta: f64) -> Result<Self, MaskError> {
        let policy = Self {
            gamma,
            eta,
            ..Self::default()
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(MaskError::InvalidPolicy(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(MaskError::InvalidPolicy(format!(
                "eta must be finite and > 0, got {}",
                self.eta
            )));
        }
        if self.placeholder.trim().is_empty() {
            return Err(MaskError::InvalidPolicy("placeholder must be non-empty".into()));
        }
        Ok(())
    }

    fn uncertain(&self, mention: &ObjectMention) -> bool {
        mention.uncertainty.is_some_and(|u| u >= self.gamma)
    }

    fn late(&self, index: usize, length: usize) -> bool {
        index as f64 >= self.eta * length as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskReason {
    Uncertainty,
    Position,
    Both,
}

impl MaskReason {
    fn from_flags(uncertain: bool, late: bool) -> Option<Self> {
        match (uncertain, late) {
            (true, true) => Some(Self::Both),
            (true, false) => Some(Self::Uncertainty),
            (false, true) => Some(Self::Position),
            (false, false) => None,
        }
    }

    fn merge(self, other: Self) -> Self {
        if self == other {
            self
        } else {
            Self::Both
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskDecision {
    pub mention: ObjectMention,
    pub reason: MaskReason,
}

/// One replaced span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub original: String,
    pub token_span: (usize, usize),
    pub reason: MaskReason,
    /// Byte offset of this record's placeholder in the masked text.
    pub masked_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedDescription {
    pub masked_text: String,
    pub placeholder: String,
    /// Left-to-right.
    pub records: Vec<MaskRecord>,
    /// Placeholders that were already present in the source text.
    #[serde(default)]
    pub preexisting_placeholders: usize,
}

impl MaskedDescription {
    pub fn placeholder_count(&self) -> usize {
        self.masked_text.matches(self.placeholder.as_str()).count()
    }
}

/// Mentions to mask in a generated description, compared against its own
/// token count. Mentions without a logprob can only qualify by position.
pub fn select_mask_targets(
    desc: &TokenizedDescription,
    mentions: &[ObjectMention],
    policy: &MaskPolicy,
) -> Vec<MaskDecision> {
    mentions
        .iter()
        .filter_map(|m| {
            MaskReason::from_flags(policy.uncertain(m), policy.late(m.token_index, desc.len())).map(|reason| {
                MaskDecision {
                    mention: m.clone(),
                    reason,
                }
            })
        })
        .collect()
}

/// Replaces every decided span with `placeholder`, leaving all other bytes alone.
pub fn apply_mask(
    desc: &TokenizedDescription,
    decisions: &[MaskDecision],
    placeholder: &str,
) -> Result<MaskedDescription, MaskError> {
    let mut ordered: Vec<&MaskDecision> = decisions.iter().collect();
    ordered.sort_by_key(|d| d.mention.token_span);
    for pair in ordered.windows(2) {
        let (a, b) = (pair[0].mention.token_span, pair[1].mention.token_span);
        if b.0 <= a.1 {
            return Err(MaskError::Overlap { first: a, second: b });
        }
    }

    let text = &desc.raw_text;
    let mut masked = String::with_capacity(text.len());
    let mut records = Vec::with_capacity(ordered.len());
    let mut cursor = 0;
    for d in ordered {
        let (first, last) = d.mention.token_span;
        if first == 0 || first > last || last > desc.len() {
            return Err(MaskError::OutOfBounds {
                span: (first, last),
                len: desc.len(),
            });
        }
        let start = desc.tokens[first - 1].start;
        let end = desc.tokens[last - 1].end;
        masked.push_str(&text[cursor..start]);
        records.push(MaskRecord {
            original: text[start..end].to_string(),
            token_span: (first, last),
            reason: d.reason,
            masked_offset: masked.len(),
        });
        masked.push_str(placeholder);
        cursor = end;
    }
    masked.push_str(&text[cursor..]);
    Ok(MaskedDescription {
        masked_text: masked,
        placeholder: placeholder.to_string(),
        records,
        preexisting_placeholders: text.matches(placeholder).count(),
    })
}

/// Restores the text that was masked.
pub fn unmask(masked: &MaskedDescription) -> Result<String, MaskError> {
    let ph = masked.placeholder.as_str();
    let expected = masked.records.len() + masked.preexisting_placeholders;
    let found = masked.placeholder_count();
    if found != expected {
        return Err(MaskError::Corrupt(format!(
            "{found} placeholder(s) in text, {expected} expected from records"
        )));
    }
    let text = &masked.masked_text;
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (i, r) in masked.records.iter().enumerate() {
        let at = r.masked_offset;
        if at < cursor || text.get(at..at + ph.len()) != Some(ph) {
            return Err(MaskError::Corrupt(format!(
                "record {} does not point at a placeholder",
                i + 1
            )));
        }
        out.push_str(&text[cursor..at]);
        out.push_str(&r.original);
        cursor = at + ph.len();
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}

/// Masking step of the inference pipeline: select, then apply.
pub fn mask_description(
    desc: &TokenizedDescription,
    mentions: &[ObjectMention],
    policy: &MaskPolicy,
) -> Result<MaskedDescription, MaskError> {
    apply_mask(desc, &select_mask_targets(desc, mentions, policy), &policy.placeholder)
}

/// Masks a hallucinatory training caption `h`.
///
/// Objects and their uncertainty/index come from the generated description.
/// An object that qualifies is masked at every place it occurs in `h`
/// (any synonym); objects absent from `h` are ignored. The position rule
/// compares the generated-description index against `eta * Length`, where
/// the length is taken from `policy.position_length_source`.
pub fn mask_training_caption(
    caption: &str,
    generated: &TokenizedDescription,
    generated_mentions: &[ObjectMention],
    vocab: &ObjectVocabulary,
    policy: &MaskPolicy,
) -> Result<MaskedDescription, MaskError> {
    let h =
        TokenizedDescription::from_text(generated.image_id.clone(), caption).map_err(|_| MaskError::EmptyCaption)?;
    let h_mentions = extract_mentions(&h, vocab);
    let length = match policy.position_length_source {
        PositionLengthSource::Caption => h.len(),
        PositionLengthSource::Generated => generated.len(),
    };

    let mut chosen: Vec<(&str, MaskReason)> = Vec::new();
    for o in generated_mentions {
        if !h_mentions.iter().any(|m| m.canonical == o.canonical) {
            continue;
        }
        let Some(reason) = MaskReason::from_flags(policy.uncertain(o), policy.late(o.token_index, length)) else {
            continue;
        };
        match chosen.iter_mut().find(|(c, _)| *c == o.canonical) {
            Some(entry) => entry.1 = entry.1.merge(reason),
            None => chosen.push((&o.canonical, reason)),
        }
    }

    let decisions: Vec<MaskDecision> = h_mentions
        .into_iter()
        .filter_map(|m| {
            let reason = chosen.iter().find(|(c, _)| *c == m.canonical)?.1;
            Some(MaskDecision { mention: m, reason })
        })
        .collect();
    apply_mask(&h, &decisions, &policy.placeholder)
}
