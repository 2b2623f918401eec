use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use super::tokenize::split_spans;
use super::CorpusError;

const COCO80: &str = include_str!("../../data/coco80.txt");

/// Canonical object labels and the surfaces that name them.
///
/// Surfaces are stored as lowercase token sequences produced by the same
/// tokenizer used on captions, so multiword forms ("dining table") match
/// token runs directly.
#[derive(Debug, Clone, Default)]
pub struct ObjectVocabulary {
    entries: BTreeMap<String, BTreeSet<String>>,
    lookup: HashMap<Vec<String>, String>,
    max_len: usize,
}

pub(crate) fn normalize_surface(surface: &str) -> Vec<String> {
    split_spans(surface)
        .into_iter()
        .map(|(s, e)| surface[s..e].to_lowercase())
        .collect()
}

impl ObjectVocabulary {
    /// Parses `canonical: syn1, syn2, …` lines. `#` lines and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut vocab = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (canonical, synonyms) = match line.split_once(':') {
                Some((c, rest)) => (c, rest.split(',').collect::<Vec<_>>()),
                None => (line, Vec::new()),
            };
            vocab.insert(line_no, canonical, synonyms.into_iter())?;
        }
        if vocab.entries.is_empty() {
            return Err(CorpusError::EmptyVocabulary);
        }
        Ok(vocab)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The shipped 80-category vocabulary with plural and synonym forms.
    pub fn coco80() -> Self {
        Self::parse(COCO80).expect("shipped vocabulary is well-formed")
    }

    /// Raw text of the shipped vocabulary file.
    pub fn coco80_source() -> &'static str {
        COCO80
    }

    fn insert<'a>(
        &mut self,
        line: usize,
        canonical: &'a str,
        synonyms: impl Iterator<Item = &'a str>,
    ) -> Result<(), CorpusError> {
        let canonical_key = normalize_surface(canonical);
        if canonical_key.is_empty() {
            return Err(CorpusError::VocabularySyntax {
                line,
                message: "missing canonical label".into(),
            });
        }
        let label = canonical_key.join(" ");
        if self.entries.contains_key(&label) {
            return Err(CorpusError::DuplicateCanonical { line, label });
        }
        let mut surfaces = BTreeSet::new();
        for surface in std::iter::once(canonical).chain(synonyms) {
            let key = normalize_surface(surface);
            if key.is_empty() {
                continue;
            }
            if let Some(owner) = self.lookup.get(&key) {
                if *owner != label {
                    return Err(CorpusError::VocabularyConflict {
                        line,
                        surface: key.join(" "),
                        first: owner.clone(),
                        second: label,
                    });
                }
            }
            self.max_len = self.max_len.max(key.len());
            surfaces.insert(key.join(" "));
            self.lookup.insert(key, label.clone());
        }
        self.entries.insert(label, surfaces);
        Ok(())
    }

    /// Number of canonical labels.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_canonical(&self, label: &str) -> bool {
        self.entries.contains_key(label)
    }

    pub fn canonicals(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// All lookup surfaces of a canonical label, including the label itself.
    pub fn surfaces(&self, label: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(label)
    }

    /// Case-insensitive lookup of a free-text surface.
    pub fn canonical_for(&self, surface: &str) -> Option<&str> {
        self.lookup.get(&normalize_surface(surface)).map(String::as_str)
    }

    /// Lookup of an already lowercased token run.
    pub(crate) fn canonical_for_tokens(&self, key: &[String]) -> Option<&str> {
        self.lookup.get(key).map(String::as_str)
    }

    /// Longest surface, in tokens.
    pub fn max_surface_len(&self) -> usize {
        self.max_len
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_counts_as_surface() {
        let v = ObjectVocabulary::parse("dog: puppy, dogs").unwrap();
        assert_eq!(v.len(), 1);
        let s: Vec<_> = v.surfaces("dog").unwrap().iter().cloned().collect();
        assert_eq!(s, ["dog", "dogs", "puppy"]);
        assert_eq!(v.canonical_for("Puppy"), Some("dog"));
    }

    #[test]
    fn conflicting_synonym_rejected() {
        let err = ObjectVocabulary::parse("bear: cub\nlion: cub").unwrap_err();
        match err {
            CorpusError::VocabularyConflict {
                line,
                surface,
                first,
                second,
            } => {
                assert_eq!(
                    (line, surface.as_str(), first.as_str(), second.as_str()),
                    (2, "cub", "bear", "lion")
                );
            }
            other => panic!("unexpected {other:?}"),
        }
        // a synonym may not shadow another canonical either
        assert!(ObjectVocabulary::parse("cat\ndog: cat").is_err());
    }

    #[test]
    fn duplicate_canonical_and_empty_rejected() {
        assert!(matches!(
            ObjectVocabulary::parse("dog\nDog: puppy"),
            Err(CorpusError::DuplicateCanonical { line: 2, .. })
        ));
        assert!(matches!(ObjectVocabulary::parse(""), Err(CorpusError::EmptyVocabulary)));
        assert!(matches!(
            ObjectVocabulary::parse("# only\n\n"),
            Err(CorpusError::EmptyVocabulary)
        ));
    }

    #[test]
    fn multiword_surfaces_keep_token_shape() {
        let v = ObjectVocabulary::parse("dining table: table, dining tables\n").unwrap();
        assert_eq!(v.max_surface_len(), 2);
        assert_eq!(v.canonical_for("Dining  Table"), Some("dining table"));
    }

    #[test]
    fn shipped_vocabulary_has_eighty_objects() {
        let non_comment = COCO80
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .count();
        assert_eq!(non_comment, 80);
        let v = ObjectVocabulary::coco80();
        assert_eq!(v.len(), 80);
        assert_eq!(v.canonical_for("puppy"), Some("dog"));
        assert_eq!(v.canonical_for("cellphone"), Some("cell phone"));
    }
}
