//! Line-delimited JSON ingestion.
//!
//! Caption records: `{"image_id": .., "text": .., "tokens": [{"t": .., "logp": ..}]}`
//! with `tokens` optional. Annotation records: `{"image_id": .., "objects": [..]}`.
//! `image_id` may be a JSON string or integer; it is kept as text.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Deserializer};

use super::{CorpusError, ImageAnnotation, ObjectVocabulary, TokenizedDescription};

fn image_id<'de, D: Deserializer<'de>>(de: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Text(String),
        Int(i64),
    }
    Ok(match Id::deserialize(de)? {
        Id::Text(s) => s,
        Id::Int(i) => i.to_string(),
    })
}

#[derive(Deserialize)]
struct CaptionRecord {
    #[serde(deserialize_with = "image_id")]
    image_id: String,
    text: String,
    #[serde(default)]
    tokens: Option<Vec<TokenRecord>>,
}

#[derive(Deserialize)]
struct TokenRecord {
    t: String,
    logp: f64,
}

#[derive(Deserialize)]
struct AnnotationRecord {
    #[serde(deserialize_with = "image_id")]
    image_id: String,
    objects: Vec<String>,
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path).map(BufReader::new).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Yields `(line_number, record)` for every non-blank line.
fn records<T: for<'de> Deserialize<'de>, R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, T), CorpusError>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                return Some(Err(CorpusError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                }))
            }
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(
            serde_json::from_str(&line)
                .map(|r| (line_no, r))
                .map_err(|e| CorpusError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                }),
        )
    })
}

pub fn parse_caption_corpus<R: BufRead>(reader: R) -> Result<Vec<TokenizedDescription>, CorpusError> {
    let mut seen = HashSet::new();
    let mut corpus = Vec::new();
    for rec in records::<CaptionRecord, _>(reader) {
        let (line, rec) = rec?;
        if !seen.insert(rec.image_id.clone()) {
            return Err(CorpusError::DuplicateImageId {
                line,
                image_id: rec.image_id,
            });
        }
        let desc = match rec.tokens {
            Some(tokens) => TokenizedDescription::from_tokens(
                rec.image_id,
                rec.text,
                tokens.into_iter().map(|t| (t.t, Some(t.logp))),
            )?,
            None => TokenizedDescription::from_text(rec.image_id, rec.text)?,
        };
        corpus.push(desc);
    }
    if corpus.is_empty() {
        log::warn!("caption corpus contains no records");
    }
    Ok(corpus)
}

/// Loads a caption corpus; order of records is preserved.
pub fn load_caption_corpus(path: impl AsRef<Path>) -> Result<Vec<TokenizedDescription>, CorpusError> {
    parse_caption_corpus(open(path.as_ref())?)
}

pub fn parse_annotations<R: BufRead>(reader: R, vocab: &ObjectVocabulary) -> Result<Vec<ImageAnnotation>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in records::<AnnotationRecord, _>(reader) {
        let (line, rec) = rec?;
        if !seen.insert(rec.image_id.clone()) {
            return Err(CorpusError::DuplicateImageId {
                line,
                image_id: rec.image_id,
            });
        }
        let mut ground_truth = BTreeSet::new();
        let mut unknown = Vec::new();
        for label in &rec.objects {
            match vocab.canonical_for(label) {
                Some(c) => {
                    ground_truth.insert(c.to_string());
                }
                None => unknown.push(label.clone()),
            }
        }
        if !unknown.is_empty() {
            return Err(CorpusError::UnknownLabels {
                image_id: rec.image_id,
                labels: unknown,
            });
        }
        out.push(ImageAnnotation {
            image_id: rec.image_id,
            ground_truth,
        });
    }
    Ok(out)
}

/// Loads annotations, folding synonyms to canonical labels.
pub fn load_annotations(path: impl AsRef<Path>, vocab: &ObjectVocabulary) -> Result<Vec<ImageAnnotation>, CorpusError> {
    parse_annotations(open(path.as_ref())?, vocab)
}
