use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::backend::{revise, BackendError, ReviseRequest, RevisorBackend};
use super::prompt::{
    build_cooccur_prompt, build_hallucination_prompt, parse_cooccur_response, parse_hallucination_response,
};
use super::{bounded_map, RevisorError};
use crate::corpus::{extract_mentions, ObjectVocabulary, TokenizedDescription};
use crate::masker::{mask_description, mask_training_caption, MaskPolicy, MaskRecord, MaskedDescription};

/// One revisor training pair: masked hallucinatory caption in, ground truth out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub image_id: String,
    pub target_caption: String,
    pub co_objects: Vec<String>,
    pub uncertain_objects: Vec<String>,
    pub hallucinatory_caption: String,
    pub masked_caption: String,
    pub placeholder: String,
    pub mask_records: Vec<MaskRecord>,
    pub preexisting_placeholders: usize,
}

impl TrainingRecord {
    pub fn masked(&self) -> MaskedDescription {
        MaskedDescription {
            masked_text: self.masked_caption.clone(),
            placeholder: self.placeholder.clone(),
            records: self.mask_records.clone(),
            preexisting_placeholders: self.preexisting_placeholders,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub image_id: String,
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBuild {
    pub records: Vec<TrainingRecord>,
    pub skipped: Vec<SkippedImage>,
}

enum Outcome {
    Record(Box<TrainingRecord>),
    Skip(SkippedImage),
}

fn skip(image_id: &str, stage: &str, reason: impl ToString) -> Outcome {
    let s = SkippedImage {
        image_id: image_id.to_string(),
        stage: stage.to_string(),
        reason: reason.to_string(),
    };
    log::warn!("skipping image `{}` at {}: {}", s.image_id, s.stage, s.reason);
    Outcome::Skip(s)
}

/// Distinct canonicals of mentions at or above the uncertainty threshold, in order.
fn uncertain_objects(gen: &TokenizedDescription, vocab: &ObjectVocabulary, gamma: f64) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for m in extract_mentions(gen, vocab) {
        if m.uncertainty.is_some_and(|u| u >= gamma) && !out.contains(&m.canonical) {
            out.push(m.canonical);
        }
    }
    out
}

fn build_one(
    gt: &TokenizedDescription,
    gen: Option<&TokenizedDescription>,
    vocab: &ObjectVocabulary,
    policy: &MaskPolicy,
    backend: &dyn RevisorBackend,
) -> Result<Outcome, BackendError> {
    let id = gt.image_id.as_str();
    let Some(gen) = gen else {
        return Ok(skip(id, "input", "no generated description for image"));
    };
    if !gen.has_logprobs() {
        log::warn!("generated description for `{id}` has no logprobs; only the position rule applies");
    }
    let uncertain = uncertain_objects(gen, vocab, policy.gamma);

    let prompt = match build_cooccur_prompt(&gt.raw_text) {
        Ok(p) => p,
        Err(e) => return Ok(skip(id, "cooccur", e)),
    };
    let co_objects = match backend.complete(&prompt) {
        Ok(text) => match parse_cooccur_response(&text) {
            Ok(c) => c,
            Err(e) => return Ok(skip(id, "cooccur", e)),
        },
        Err(e @ BackendError::Unavailable { .. }) => return Err(e),
        Err(e) => return Ok(skip(id, "cooccur", e)),
    };

    let prompt = match build_hallucination_prompt(&gt.raw_text, &co_objects, &uncertain) {
        Ok(p) => p,
        Err(e) => return Ok(skip(id, "hallucinate", e)),
    };
    let caption = match backend.complete(&prompt) {
        Ok(text) => match parse_hallucination_response(&text) {
            Ok(c) => c,
            Err(e) => return Ok(skip(id, "hallucinate", e)),
        },
        Err(e @ BackendError::Unavailable { .. }) => return Err(e),
        Err(e) => return Ok(skip(id, "hallucinate", e)),
    };

    let mentions = extract_mentions(gen, vocab);
    let masked = match mask_training_caption(&caption, gen, &mentions, vocab, policy) {
        Ok(m) => m,
        Err(e) => return Ok(skip(id, "mask", e)),
    };
    Ok(Outcome::Record(Box::new(TrainingRecord {
        image_id: id.to_string(),
        target_caption: gt.raw_text.clone(),
        co_objects,
        uncertain_objects: uncertain,
        hallucinatory_caption: caption,
        masked_caption: masked.masked_text,
        placeholder: masked.placeholder,
        mask_records: masked.records,
        preexisting_placeholders: masked.preexisting_placeholders,
    })))
}

/// Builds revisor training data from ground-truth captions and the model's
/// own generated descriptions of the same images (used for uncertainty and
/// position). Images that fail a stage are skipped and reported; more than
/// half skipped is an error. An unreachable backend aborts the whole build.
pub fn build_training_records(
    ground_truth: &[TokenizedDescription],
    generated: &[TokenizedDescription],
    vocab: &ObjectVocabulary,
    policy: &MaskPolicy,
    backend: &dyn RevisorBackend,
    max_in_flight: usize,
) -> Result<DatasetBuild, RevisorError> {
    policy.validate()?;
    if ground_truth.is_empty() {
        return Err(RevisorError::EmptyInput);
    }
    let by_id: HashMap<&str, &TokenizedDescription> = generated.iter().map(|g| (g.image_id.as_str(), g)).collect();
    let outcomes = bounded_map(ground_truth, max_in_flight, |gt| {
        build_one(gt, by_id.get(gt.image_id.as_str()).copied(), vocab, policy, backend)
    })?;

    let mut build = DatasetBuild {
        records: Vec::new(),
        skipped: Vec::new(),
    };
    for o in outcomes {
        match o? {
            Outcome::Record(r) => build.records.push(*r),
            Outcome::Skip(s) => build.skipped.push(s),
        }
    }
    let total = ground_truth.len();
    if build.skipped.len() * 2 > total {
        return Err(RevisorError::TooManySkips {
            skipped: build.skipped.len(),
            total,
        });
    }
    Ok(build)
}

/// A generated description after masking and revision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisedRecord {
    pub image_id: String,
    pub original_text: String,
    pub masked_text: String,
    pub placeholder: String,
    pub mask_records: Vec<MaskRecord>,
    pub preexisting_placeholders: usize,
    pub revised_text: String,
    pub backend_id: String,
}

/// Masks every description and sends it to the backend. Any failure aborts.
pub fn revise_corpus(
    generated: &[TokenizedDescription],
    vocab: &ObjectVocabulary,
    policy: &MaskPolicy,
    backend: &dyn RevisorBackend,
    max_in_flight: usize,
) -> Result<Vec<RevisedRecord>, RevisorError> {
    policy.validate()?;
    if generated.is_empty() {
        return Err(RevisorError::EmptyInput);
    }
    let results = bounded_map(generated, max_in_flight, |d| -> Result<RevisedRecord, RevisorError> {
        let masked = mask_description(d, &extract_mentions(d, vocab), policy)?;
        let request = ReviseRequest {
            image_id: d.image_id.clone(),
            masked_text: masked.masked_text.clone(),
            context: None,
        };
        let response = revise(&request, backend)?;
        Ok(RevisedRecord {
            image_id: d.image_id.clone(),
            original_text: d.raw_text.clone(),
            masked_text: masked.masked_text,
            placeholder: masked.placeholder,
            mask_records: masked.records,
            preexisting_placeholders: masked.preexisting_placeholders,
            revised_text: response.revised_text,
            backend_id: response.backend_id,
        })
    })?;
    results.into_iter().collect()
}
