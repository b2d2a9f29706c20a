//! Optional hosted transcription and labeling services.
//!
//! The rule parser is the offline reference; these adapters only define
//! the request/response contract and error behaviour around a provider.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airspace::{AirportConfig, IntentLabel};

use super::context::{DynamicContext, StaticContext};
use super::intent::extract_intent;
use super::normalize::normalize_transcript;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExternalError {
    #[error("client not configured")]
    NotConfigured,
    #[error("request timed out after {0:.1} s")]
    Timeout(f64),
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("bad provider response: {0}")]
    BadResponse(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint: String,
    /// Environment variable holding a bearer token, if the provider needs one.
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

pub trait TranscriptionClient {
    fn transcribe(&self, call_id: &str, audio_ref: &str, context: &str) -> Result<String, ExternalError>;
}

pub trait LabelingClient {
    fn complete(&self, call_id: &str, prompt: &str) -> Result<String, ExternalError>;
}

#[derive(Serialize)]
struct ProviderRequest<'a> {
    call_id: &'a str,
    kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    audio_ref: Option<&'a str>,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct ProviderReply {
    #[serde(default)]
    call_id: Option<String>,
    text: String,
}

/// JSON-over-HTTP provider: POSTs `{call_id, kind, audio_ref?, prompt}` and
/// expects `{call_id?, text}` back. Retries with exponential backoff
/// (factor 2, up to 25% jitter).
pub struct HttpClient {
    config: ClientConfig,
    agent: ureq::Agent,
}

const BACKOFF_BASE_S: f64 = 0.25;

impl HttpClient {
    pub fn new(config: ClientConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .build()
            .into();
        Self { config, agent }
    }

    fn post(&self, req: &ProviderRequest<'_>) -> Result<String, ExternalError> {
        let body = serde_json::to_string(req).expect("request serializes");
        let token = match &self.config.credential_env {
            Some(var) => Some(std::env::var(var).map_err(|_| ExternalError::MissingCredential(var.clone()))?),
            None => None,
        };
        let mut attempt = 0;
        loop {
            log::info!("provider request call={} kind={} attempt={}", req.call_id, req.kind, attempt);
            let result = self.send_once(&body, token.as_deref());
            match result {
                Ok(text) => {
                    let reply: ProviderReply =
                        serde_json::from_str(&text).map_err(|e| ExternalError::BadResponse(e.to_string()))?;
                    if let Some(id) = &reply.call_id {
                        if id != req.call_id {
                            return Err(ExternalError::BadResponse(format!(
                                "reply for call {id}, expected {}",
                                req.call_id
                            )));
                        }
                    }
                    log::info!("provider reply call={} text={:?}", req.call_id, reply.text);
                    return Ok(reply.text);
                }
                Err(e @ ExternalError::BadResponse(_)) => return Err(e),
                Err(e) if attempt >= self.config.max_retries => return Err(e),
                Err(e) => {
                    log::warn!("provider call {} failed ({e}); retrying", req.call_id);
                    let jitter = 1.0 + rand::rng().random_range(0.0..0.25);
                    std::thread::sleep(Duration::from_secs_f64(BACKOFF_BASE_S * 2f64.powi(attempt as i32) * jitter));
                    attempt += 1;
                }
            }
        }
    }

    fn send_once(&self, body: &str, token: Option<&str>) -> Result<String, ExternalError> {
        let mut req = self.agent.post(&self.config.endpoint).header("content-type", "application/json");
        if let Some(t) = token {
            req = req.header("authorization", &format!("Bearer {t}"));
        }
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => ExternalError::Timeout(self.config.timeout_s),
            ureq::Error::StatusCode(code) => ExternalError::Unavailable(format!("HTTP {code}")),
            other => ExternalError::Unavailable(other.to_string()),
        };
        let mut resp = req.send(body).map_err(map_err)?;
        resp.body_mut().read_to_string().map_err(map_err)
    }
}

impl TranscriptionClient for HttpClient {
    fn transcribe(&self, call_id: &str, audio_ref: &str, context: &str) -> Result<String, ExternalError> {
        self.post(&ProviderRequest { call_id, kind: "transcribe", audio_ref: Some(audio_ref), prompt: context })
    }
}

impl LabelingClient for HttpClient {
    fn complete(&self, call_id: &str, prompt: &str) -> Result<String, ExternalError> {
        self.post(&ProviderRequest { call_id, kind: "label", audio_ref: None, prompt })
    }
}

/// Provider text returned verbatim.
pub fn transcribe_external(
    client: Option<&dyn TranscriptionClient>,
    call_id: &str,
    audio_ref: &str,
    context: &StaticContext,
) -> Result<String, ExternalError> {
    let client = client.ok_or(ExternalError::NotConfigured)?;
    client.transcribe(call_id, audio_ref, &context.render())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalLabel {
    pub call_id: String,
    pub speaker: Option<String>,
    pub intent: IntentLabel,
    pub raw_reply: String,
}

pub fn labeling_prompt(transcript: &str, static_ctx: &StaticContext, dynamic_text: &str) -> String {
    format!(
        "{}\n{}\nRadio call: {}\nReply as: <tail number or Unknown> / <intent label>",
        static_ctx.render(),
        dynamic_text,
        transcript
    )
}

/// Reads `<speaker> / <label>` replies. Speakers absent from the context
/// become `None`; replies with no recognizable label become
/// `InsufficientInformation`.
pub fn parse_label_reply(reply: &str, context: &DynamicContext, airport: &AirportConfig) -> (Option<String>, IntentLabel) {
    let (speaker_part, label_part) = match reply.split_once('/') {
        Some((s, l)) => (Some(s.trim()), l.trim()),
        None => (None, reply.trim()),
    };
    let speaker = speaker_part
        .filter(|s| !s.eq_ignore_ascii_case("unknown"))
        .and_then(|s| context.entries.iter().find(|e| e.tail_number.eq_ignore_ascii_case(s)))
        .map(|e| e.tail_number.clone());
    let intent = match label_part.parse::<IntentLabel>() {
        Ok(IntentLabel::Unknown) | Err(_) => extract_intent(&normalize_transcript(label_part), airport),
        Ok(l) => l,
    };
    (speaker, intent)
}

pub fn label_external(
    client: Option<&dyn LabelingClient>,
    call_id: &str,
    transcript: &str,
    static_ctx: &StaticContext,
    dynamic: (&DynamicContext, &str),
    airport: &AirportConfig,
) -> Result<ExternalLabel, ExternalError> {
    let client = client.ok_or(ExternalError::NotConfigured)?;
    let reply = client.complete(call_id, &labeling_prompt(transcript, static_ctx, dynamic.1))?;
    let (speaker, intent) = parse_label_reply(&reply, dynamic.0, airport);
    Ok(ExternalLabel { call_id: call_id.to_string(), speaker, intent, raw_reply: reply })
}
