use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompt::{PromptTemplate, EMPTY_LIST_MARKER};
use super::{bounded_map, RevisorError};
use crate::corpus::ObjectVocabulary;
use crate::masker::DEFAULT_PLACEHOLDER;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend at {url} unavailable after {attempts} attempt(s): {last}")]
    Unavailable { url: String, attempts: u32, last: String },
    #[error("backend protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviseRequest {
    pub image_id: String,
    pub masked_text: String,
    #[serde(default)]
    pub context: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviseResponse {
    pub image_id: String,
    pub revised_text: String,
    pub backend_id: String,
}

/// An external model that rewrites masked descriptions and answers prompts.
pub trait RevisorBackend: Send + Sync {
    fn backend_id(&self) -> String;
    /// Rewrites a masked description. Must not alter anything but the text it returns.
    fn revise(&self, request: &ReviseRequest) -> Result<String, BackendError>;
    /// Free-form completion of a prompt.
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Http,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub mode: BackendMode,
    pub base_url: String,
    pub max_in_flight: usize,
    /// Extra attempts after the first one.
    pub retries: u32,
    pub timeout_secs: f64,
    /// First backoff delay; doubles on every retry.
    pub backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            mode: BackendMode::Mock,
            base_url: "http://127.0.0.1:8080".into(),
            max_in_flight: 4,
            retries: 3,
            timeout_secs: 30.0,
            backoff_ms: 200,
        }
    }
}

fn unix_millis() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

/// Sends one request, logging both directions. An empty rewrite is a protocol error.
pub fn revise(request: &ReviseRequest, backend: &dyn RevisorBackend) -> Result<ReviseResponse, BackendError> {
    log::info!(
        "revise request t={} backend={} image_id={} masked_text={:?}",
        unix_millis(),
        backend.backend_id(),
        request.image_id,
        request.masked_text
    );
    let revised_text = backend.revise(request)?;
    log::info!(
        "revise response t={} image_id={} revised_text={:?}",
        unix_millis(),
        request.image_id,
        revised_text
    );
    if revised_text.trim().is_empty() {
        return Err(BackendError::Protocol(format!(
            "empty revised_text for image `{}`",
            request.image_id
        )));
    }
    Ok(ReviseResponse {
        image_id: request.image_id.clone(),
        revised_text,
        backend_id: backend.backend_id(),
    })
}

/// [`revise`] over many requests with bounded concurrency; results keep input order.
pub fn revise_all(
    requests: &[ReviseRequest],
    backend: &dyn RevisorBackend,
    max_in_flight: usize,
) -> Result<Vec<Result<ReviseResponse, BackendError>>, RevisorError> {
    bounded_map(requests, max_in_flight, |r| revise(r, backend))
}

/// Offline stand-in. Deterministic for a given seed and input.
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub seed: u64,
    pub placeholder: String,
    pub fill: String,
    objects: Vec<String>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            placeholder: DEFAULT_PLACEHOLDER.into(),
            fill: "thing".into(),
            objects: ObjectVocabulary::coco80().canonicals().map(str::to_string).collect(),
        }
    }

    fn rng_for(&self, input: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(input.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let len = text[from..].find(end)?;
    Some(&text[from..from + len])
}

fn split_list(list: &str) -> Vec<&str> {
    let list = list.trim();
    if list.is_empty() || list == EMPTY_LIST_MARKER {
        return Vec::new();
    }
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

impl RevisorBackend for MockBackend {
    fn backend_id(&self) -> String {
        format!("mock:{}", self.seed)
    }

    fn revise(&self, request: &ReviseRequest) -> Result<String, BackendError> {
        Ok(request.masked_text.replace(&self.placeholder, &self.fill))
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut rng = self.rng_for(prompt);
        let cooccur_head = PromptTemplate::COOCCUR.body.split('{').next().unwrap_or_default();
        if prompt.starts_with(cooccur_head) {
            let picks = rand::seq::index::sample(&mut rng, self.objects.len(), 3);
            let lines: Vec<&str> = picks.iter().map(|i| self.objects[i].as_str()).collect();
            return Ok(lines.join("\n"));
        }
        let caption = between(prompt, "Input caption: ", "\nco_objects list: ");
        let co = between(prompt, "co_objects list: ", "\nuncertain_objets list: ");
        let unc = between(prompt, "uncertain_objets list: ", "\nSelect one object");
        let (Some(caption), Some(co), Some(unc)) = (caption, co, unc) else {
            return Err(BackendError::Protocol("mock backend: unrecognized prompt".into()));
        };
        let added: Vec<&str> = [split_list(co), split_list(unc)]
            .iter()
            .filter_map(|l| l.choose(&mut rng).copied())
            .collect();
        if added.is_empty() {
            return Ok(format!("Output caption: {caption}"));
        }
        let base = caption.trim_end().trim_end_matches('.');
        let tail: Vec<String> = added.iter().map(|o| format!("a {o}")).collect();
        Ok(format!("Output caption: {base} with {}.", tail.join(" and ")))
    }
}

/// JSON-over-HTTP backend.
///
/// `POST {base}/v1/revise` with a [`ReviseRequest`] answers `{"revised_text": ...}`;
/// `POST {base}/v1/complete` with `{"prompt": ...}` answers `{"text": ...}`.
/// Transport failures, 5xx and 429 are retried with exponential backoff.
pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ReviseBody {
    revised_text: String,
}

#[derive(Deserialize)]
struct CompleteBody {
    text: String,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn post<B: Serialize, T: serde::de::DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, BackendError> {
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), path);
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                log::warn!(
                    "retrying {url} in {delay} ms (attempt {}/{attempts}): {last}",
                    attempt + 1
                );
                std::thread::sleep(Duration::from_millis(delay));
            }
            let mut resp = match self.agent.post(&url).send_json(body) {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if status == 429 || status >= 500 {
                last = format!("HTTP {status}");
                continue;
            }
            if status != 200 {
                return Err(BackendError::Protocol(format!("{url}: HTTP {status}")));
            }
            return resp
                .body_mut()
                .read_json::<T>()
                .map_err(|e| BackendError::Protocol(format!("{url}: malformed body: {e}")));
        }
        Err(BackendError::Unavailable { url, attempts, last })
    }
}

impl RevisorBackend for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http:{}", self.config.base_url)
    }

    fn revise(&self, request: &ReviseRequest) -> Result<String, BackendError> {
        self.post::<_, ReviseBody>("/v1/revise", request)
            .map(|b| b.revised_text)
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.post::<_, CompleteBody>("/v1/complete", &serde_json::json!({ "prompt": prompt }))
            .map(|b| b.text)
    }
}
