//! Hallucination-factor scores.
//!
//! - CoScore: per description, the summed co-occurrence degree
//!   `|S(a) ∩ S(b)| / (|S(a)| + |S(b)|)` between every hallucinated object `a`
//!   and every other object `b` of the same description, where `S(o)` is the
//!   set of corpus descriptions mentioning `o`.
//! - UnScore: `-log p` of the object's first token.
//! - PoScore: `Index(o) / N_s`.
//!
//! CoScore is a caption-level quantity; UnScore and PoScore are per mention,
//! and every occurrence of a repeated object is scored.

mod histogram;
mod ratios;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chair::{LabeledDescription, ObjectLabel};
use crate::corpus::{ObjectMention, TokenizedDescription};

pub use histogram::{factor_distributions, FactorHistograms, PairedHistogram};
pub use ratios::{ratio_stats, RatioStats};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FactorError {
    #[error("cannot build a co-occurrence index from an empty corpus")]
    EmptyCorpus,
    #[error("object `{0}` is not present in the co-occurrence index")]
    MissingFromIndex(String),
    #[error("uncertainty unavailable for `{canonical}` at token {token_index}: no logprob")]
    UncertaintyUnavailable { canonical: String, token_index: usize },
    #[error("histogram needs at least one bin")]
    ZeroBins,
}

/// Inverted index from canonical object to the descriptions mentioning it.
///
/// Descriptions are identified by their position in the indexed corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CooccurIndex {
    pub sets: BTreeMap<String, BTreeSet<usize>>,
    pub descriptions: usize,
}

impl CooccurIndex {
    /// Builds the index from each description's mention list.
    pub fn build<'a, I>(corpus: I) -> Result<Self, FactorError>
    where
        I: IntoIterator<Item = &'a [ObjectMention]>,
    {
        let mut index = Self::default();
        for (doc, mentions) in corpus.into_iter().enumerate() {
            for m in mentions {
                index.sets.entry(m.canonical.clone()).or_default().insert(doc);
            }
            index.descriptions = doc + 1;
        }
        if index.descriptions == 0 {
            return Err(FactorError::EmptyCorpus);
        }
        Ok(index)
    }

    pub fn from_labeled(corpus: &[LabeledDescription]) -> Result<Self, FactorError> {
        Self::build(corpus.iter().map(|d| d.mentions.as_slice()))
    }

    pub fn set(&self, canonical: &str) -> Option<&BTreeSet<usize>> {
        self.sets.get(canonical)
    }

    /// `|S(o)|`, zero for objects never mentioned.
    pub fn support(&self, canonical: &str) -> usize {
        self.sets.get(canonical).map_or(0, BTreeSet::len)
    }

    /// `|S(a) ∩ S(b)| / (|S(a)| + |S(b)|)`
    pub fn degree(&self, a: &str, b: &str) -> Result<f64, FactorError> {
        let sa = self.set(a).ok_or_else(|| FactorError::MissingFromIndex(a.into()))?;
        let sb = self.set(b).ok_or_else(|| FactorError::MissingFromIndex(b.into()))?;
        let (small, large) = if sa.len() <= sb.len() { (sa, sb) } else { (sb, sa) };
        let shared = small.iter().filter(|d| large.contains(d)).count();
        Ok(shared as f64 / (sa.len() + sb.len()) as f64)
    }
}

/// `build_cooccur_index` over labeled descriptions.
pub fn build_cooccur_index(corpus: &[LabeledDescription]) -> Result<CooccurIndex, FactorError> {
    CooccurIndex::from_labeled(corpus)
}

/// CoScore of one description. Zero when nothing is hallucinated.
pub fn co_score(desc: &LabeledDescription, index: &CooccurIndex) -> Result<f64, FactorError> {
    let mut total = 0.0;
    for h in desc.hallucinated() {
        for other in desc.objects() {
            if other != h {
                total += index.degree(h, other)?;
            }
        }
    }
    Ok(total)
}

/// UnScore: the stored `-log p` of the mention's first token.
pub fn un_score(mention: &ObjectMention) -> Result<f64, FactorError> {
    mention.uncertainty.ok_or_else(|| FactorError::UncertaintyUnavailable {
        canonical: mention.canonical.clone(),
        token_index: mention.token_index,
    })
}

/// PoScore: `Index(o) / N_s`, in `(0, 1]`.
pub fn po_score(mention: &ObjectMention, desc: &TokenizedDescription) -> f64 {
    mention.token_index as f64 / desc.len() as f64
}

/// CoScore of one description, keyed by image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionScore {
    pub image_id: String,
    pub hallucinatory: bool,
    pub co_score: f64,
}

/// UnScore / PoScore of one mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionScore {
    pub image_id: String,
    pub canonical: String,
    pub token_index: usize,
    pub label: ObjectLabel,
    pub un_score: Option<f64>,
    pub po_score: f64,
}

impl MentionScore {
    pub fn is_hallucinated(&self) -> bool {
        self.label == ObjectLabel::Hallucinated
    }
}

/// Every per-description and per-mention score of a labeled corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub descriptions: Vec<DescriptionScore>,
    pub mentions: Vec<MentionScore>,
}

impl CorpusScores {
    pub fn compute(corpus: &[LabeledDescription], index: &CooccurIndex) -> Result<Self, FactorError> {
        let mut descriptions = Vec::with_capacity(corpus.len());
        let mut mentions = Vec::new();
        for d in corpus {
            descriptions.push(DescriptionScore {
                image_id: d.image_id().to_string(),
                hallucinatory: d.is_hallucinatory(),
                co_score: co_score(d, index)?,
            });
            for m in &d.mentions {
                mentions.push(MentionScore {
                    image_id: d.image_id().to_string(),
                    canonical: m.canonical.clone(),
                    token_index: m.token_index,
                    label: d.label_of(&m.canonical).unwrap_or(ObjectLabel::Real),
                    un_score: m.uncertainty,
                    po_score: po_score(m, &d.description),
                });
            }
        }
        Ok(Self { descriptions, mentions })
    }

    /// Mentions that carry an uncertainty value.
    pub fn uncertainty_coverage(&self) -> usize {
        self.mentions.iter().filter(|m| m.un_score.is_some()).count()
    }
}

/// Everything emitted by a factor analysis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    pub scores: CorpusScores,
    pub histograms: FactorHistograms,
    pub ratios: RatioStats,
}

impl FactorReport {
    pub fn compute(
        corpus: &[LabeledDescription],
        index: &CooccurIndex,
        bins: usize,
        eta: f64,
    ) -> Result<Self, FactorError> {
        let scores = CorpusScores::compute(corpus, index)?;
        let histograms = factor_distributions(&scores, bins)?;
        let ratios = ratio_stats(&scores, eta);
        Ok(Self {
            scores,
            histograms,
            ratios,
        })
    }
}
