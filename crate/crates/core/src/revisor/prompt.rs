//! Prompt templates for building hallucinatory training captions, and
//! lenient parsers for what the language model sends back.

use serde::{Deserialize, Serialize};

use super::RevisorError;

const COOCCUR_BODY: &str = "List three other objects that you think are most likely to appear with the objects in the scene described below:\n\
{description}\n\
Output in strict accordance with the following format:\n\
Object one\n\
Object two\n\
Object three";

const HALLUCINATE_BODY: &str = "Input caption: {description}\n\
co_objects list: {co_objects list}\n\
uncertain_objets list: {uncertain_objets list}\n\
Select one object from \"co_objects list\" and \"uncertain_objects list\" respectively and add it to \"Input caption\" to get \"Output caption\". (Try not to change the format)\n\
Output caption:";

/// Rendered in place of an empty object list.
pub const EMPTY_LIST_MARKER: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    CooccurList,
    HallucinateCaption,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub body: &'static str,
}

impl PromptTemplate {
    pub const COOCCUR: Self = Self {
        kind: PromptKind::CooccurList,
        body: COOCCUR_BODY,
    };
    pub const HALLUCINATE: Self = Self {
        kind: PromptKind::HallucinateCaption,
        body: HALLUCINATE_BODY,
    };

    /// Substitutes `{name}` slots in a single pass. Slot values are inserted
    /// literally and never re-scanned, so braces inside values are inert.
    pub fn render(&self, slots: &[(&str, &str)]) -> Result<String, RevisorError> {
        let mut out = String::with_capacity(self.body.len() + 64);
        let mut rest = self.body;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or_else(|| RevisorError::UnresolvedSlot(after.to_string()))?;
            let name = &after[..close];
            let value = slots
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| RevisorError::UnresolvedSlot(name.to_string()))?;
            out.push_str(value);
            rest = &after[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// Asks for three objects likely to co-occur with the described scene.
pub fn build_cooccur_prompt(description: &str) -> Result<String, RevisorError> {
    if description.trim().is_empty() {
        return Err(RevisorError::EmptyDescription);
    }
    PromptTemplate::COOCCUR.render(&[("description", description)])
}

fn render_list(items: &[String]) -> String {
    if items.is_empty() {
        EMPTY_LIST_MARKER.to_string()
    } else {
        items.join(", ")
    }
}

/// Asks for the caption rewritten with one co-occurring and one uncertain object added.
pub fn build_hallucination_prompt(
    caption: &str,
    co_objects: &[String],
    uncertain_objects: &[String],
) -> Result<String, RevisorError> {
    if caption.trim().is_empty() {
        return Err(RevisorError::EmptyDescription);
    }
    if co_objects.is_empty() || uncertain_objects.is_empty() {
        log::warn!(
            "hallucination prompt with empty list(s): co_objects={}, uncertain_objects={}",
            co_objects.len(),
            uncertain_objects.len()
        );
    }
    PromptTemplate::HALLUCINATE.render(&[
        ("description", caption),
        ("co_objects list", &render_list(co_objects)),
        ("uncertain_objets list", &render_list(uncertain_objects)),
    ])
}

/// Strips a leading list marker: `1.`, `2)`, `3:`, `-`, `*` or `•`.
fn strip_marker(line: &str) -> &str {
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')', ':']) {
            return r.trim_start();
        }
    }
    line.strip_prefix(['-', '*', '•']).map_or(line, str::trim_start)
}

const MAX_LABEL_WORDS: usize = 4;

/// Up to three object labels, one per line.
///
/// Lines are trimmed, list markers stripped, trailing punctuation dropped and
/// the result lowercased. Lines that look like prose (more than four words,
/// or ending in a colon) are skipped with a warning.
pub fn parse_cooccur_response(text: &str) -> Result<Vec<String>, RevisorError> {
    let mut labels = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.ends_with(':') || line.split_whitespace().count() > MAX_LABEL_WORDS {
            log::warn!("skipping non-label line in co-occurrence response: {line:?}");
            continue;
        }
        let label = strip_marker(line)
            .trim_end_matches(['.', ',', ';'])
            .trim()
            .to_lowercase();
        if label.is_empty() {
            continue;
        }
        labels.push(label);
        if labels.len() == 3 {
            break;
        }
    }
    if labels.is_empty() {
        return Err(RevisorError::Parse {
            message: "no object labels found".into(),
            raw: text.to_string(),
        });
    }
    Ok(labels)
}

/// The rewritten caption, with an echoed `Output caption:` prefix and
/// surrounding quotes removed. Content is otherwise kept verbatim.
pub fn parse_hallucination_response(text: &str) -> Result<String, RevisorError> {
    let mut t = text.trim();
    const PREFIX: &str = "output caption:";
    if t.len() >= PREFIX.len() && t[..PREFIX.len()].eq_ignore_ascii_case(PREFIX) {
        t = t[PREFIX.len()..].trim();
    }
    if t.len() >= 2 && t.starts_with('"') && t.ends_with('"') {
        t = t[1..t.len() - 1].trim();
    }
    if t.is_empty() {
        return Err(RevisorError::Parse {
            message: "empty output caption".into(),
            raw: text.to_string(),
        });
    }
    Ok(t.to_string())
}
