//! Client for an HTTP entity annotator.
//!
//! Request: `{"documents": [{"id", "text"}]}`; response:
//! `{"documents": [{"id", "entities": [{"start", "end", "type", "text"}]}]}`.
//! Every returned span is checked against its document; a document with any
//! invalid span is rejected and re-annotated locally.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{annotate, validate_spans, EntitySpan, EntityType, Gazetteer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    /// Attempts after the first failed request.
    pub max_retries: usize,
    pub batch_size: usize,
    pub timeout_secs: u64,
    pub retry_backoff_ms: u64,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), max_retries: 2, batch_size: 32, timeout_secs: 30, retry_backoff_ms: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RemoteOutcome {
    pub spans: Vec<Vec<EntitySpan>>,
    pub rejections: Vec<Rejection>,
}

#[derive(Serialize)]
struct RequestDoc<'a> {
    id: &'a str,
    text: &'a str,
}

#[derive(Serialize)]
struct Request<'a> {
    documents: Vec<RequestDoc<'a>>,
}

#[derive(Deserialize)]
struct RawEntity {
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    entity_type: String,
    text: String,
}

#[derive(Deserialize)]
struct ResponseDoc {
    id: String,
    #[serde(default)]
    entities: Vec<RawEntity>,
}

#[derive(Deserialize)]
struct Response {
    documents: Vec<ResponseDoc>,
}

fn post_batch(agent: &ureq::Agent, cfg: &RemoteConfig, body: &Request<'_>) -> Result<Response> {
    let mut last_err = String::new();
    for attempt in 0..=cfg.max_retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(cfg.retry_backoff_ms));
            log::info!("retrying annotator request (attempt {})", attempt + 1);
        }
        match agent.post(&cfg.url).send_json(body) {
            Ok(mut resp) => match resp.body_mut().read_json::<Response>() {
                Ok(parsed) => return Ok(parsed),
                Err(e) => last_err = format!("bad response body: {e}"),
            },
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(Error::Remote(format!(
        "{} failed after {} attempts: {last_err}",
        cfg.url,
        cfg.max_retries + 1
    )))
}

fn convert(text: &str, raw: Vec<RawEntity>) -> Result<Vec<EntitySpan>> {
    let spans = raw
        .into_iter()
        .map(|e| Ok(EntitySpan::new(e.start, e.end, e.entity_type.parse::<EntityType>()?, e.text)))
        .collect::<Result<Vec<_>>>()?;
    validate_spans(text, &spans)?;
    let mut spans = spans;
    spans.sort_by_key(|s| s.start);
    Ok(spans)
}

/// Annotates `(id, text)` documents remotely, in input order. Batches are sent
/// one at a time; a transport failure surviving all retries is an error.
pub fn fetch_remote_annotations(
    docs: &[(String, String)],
    cfg: &RemoteConfig,
    fallback: &Gazetteer,
) -> Result<RemoteOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("remote batch_size must be positive".into()));
    }
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
        .build()
        .into();
    let mut outcome = RemoteOutcome::default();
    for batch in docs.chunks(cfg.batch_size) {
        let request = Request {
            documents: batch.iter().map(|(id, text)| RequestDoc { id, text }).collect(),
        };
        let response = post_batch(&agent, cfg, &request)?;
        let mut by_id: HashMap<String, Vec<RawEntity>> =
            response.documents.into_iter().map(|d| (d.id, d.entities)).collect();
        for (id, text) in batch {
            let result = match by_id.remove(id) {
                Some(raw) => convert(text, raw),
                None => Err(Error::Remote("document missing from response".into())),
            };
            match result {
                Ok(spans) => outcome.spans.push(spans),
                Err(e) => {
                    log::warn!("annotator output for `{id}` rejected: {e}");
                    outcome.rejections.push(Rejection { doc_id: id.clone(), reason: e.to_string() });
                    outcome.spans.push(annotate(text, fallback));
                }
            }
        }
    }
    Ok(outcome)
}
