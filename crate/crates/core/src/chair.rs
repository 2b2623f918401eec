//! CHAIR metrics.
//!
//! Objects are counted once per caption: a caption that says "dog" three
//! times contributes one mentioned object. An object is hallucinated when
//! its canonical label is missing from the image's ground truth; omitted
//! ground-truth objects are not penalized.

use serde::{Deserialize, Serialize};

use crate::corpus::{ImageAnnotation, ObjectMention, TokenizedDescription};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChairError {
    #[error("annotation for `{annotation}` used to label description `{description}`")]
    ImageMismatch { description: String, annotation: String },
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectLabel {
    Hallucinated,
    Real,
}

/// A description whose unique mentioned objects are labeled against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDescription {
    pub description: TokenizedDescription,
    pub mentions: Vec<ObjectMention>,
    /// One entry per unique canonical, in order of first appearance.
    pub labels: Vec<(String, ObjectLabel)>,
}

impl LabeledDescription {
    pub fn image_id(&self) -> &str {
        &self.description.image_id
    }

    /// Unique canonical objects, first-appearance order.
    pub fn objects(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|(c, _)| c.as_str())
    }

    pub fn hallucinated(&self) -> impl Iterator<Item = &str> {
        self.labels
            .iter()
            .filter(|(_, l)| *l == ObjectLabel::Hallucinated)
            .map(|(c, _)| c.as_str())
    }

    pub fn label_of(&self, canonical: &str) -> Option<ObjectLabel> {
        self.labels.iter().find(|(c, _)| c == canonical).map(|(_, l)| *l)
    }

    /// `n_h`
    pub fn n_hallucinated(&self) -> usize {
        self.hallucinated().count()
    }

    /// `n_r`
    pub fn n_real(&self) -> usize {
        self.labels.len() - self.n_hallucinated()
    }

    pub fn is_hallucinatory(&self) -> bool {
        self.n_hallucinated() > 0
    }
}

/// Partitions the unique mentioned objects by membership in the ground truth.
pub fn label_mentions(
    description: TokenizedDescription,
    mentions: Vec<ObjectMention>,
    annotation: &ImageAnnotation,
) -> Result<LabeledDescription, ChairError> {
    if description.image_id != annotation.image_id {
        return Err(ChairError::ImageMismatch {
            description: description.image_id,
            annotation: annotation.image_id.clone(),
        });
    }
    let mut labels: Vec<(String, ObjectLabel)> = Vec::new();
    for m in &mentions {
        if labels.iter().any(|(c, _)| *c == m.canonical) {
            continue;
        }
        let label = if annotation.ground_truth.contains(&m.canonical) {
            ObjectLabel::Real
        } else {
            ObjectLabel::Hallucinated
        };
        labels.push((m.canonical.clone(), label));
    }
    Ok(LabeledDescription {
        description,
        mentions,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairReport {
    pub chair_i: f64,
    pub chair_s: f64,
    pub total_mentioned_objects: usize,
    pub total_hallucinated_objects: usize,
    pub total_captions: usize,
    pub captions_with_hallucination: usize,
}

/// Corpus-level CHAIR_I and CHAIR_S.
///
/// A corpus without any mentioned object gets `chair_i = 0` and a warning.
pub fn chair_scores(corpus: &[LabeledDescription]) -> Result<ChairReport, ChairError> {
    if corpus.is_empty() {
        return Err(ChairError::EmptyCorpus);
    }
    let (mut mentioned, mut hallucinated, mut flagged) = (0usize, 0usize, 0usize);
    for d in corpus {
        let n_h = d.n_hallucinated();
        mentioned += d.labels.len();
        hallucinated += n_h;
        flagged += usize::from(n_h > 0);
    }
    let chair_i = if mentioned == 0 {
        log::warn!("no objects mentioned in {} captions; CHAIR_I set to 0", corpus.len());
        0.0
    } else {
        hallucinated as f64 / mentioned as f64
    };
    Ok(ChairReport {
        chair_i,
        chair_s: flagged as f64 / corpus.len() as f64,
        total_mentioned_objects: mentioned,
        total_hallucinated_objects: hallucinated,
        total_captions: corpus.len(),
        captions_with_hallucination: flagged,
    })
}
