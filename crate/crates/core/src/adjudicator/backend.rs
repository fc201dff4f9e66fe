//! Transports that turn an [`AdjudicationRequest`] into raw model text.

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::path::Path;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::parse::{render_response, Confidence, Label, ParsedVerdict, DESCRIPTION_KEY};
use super::{AdjudicationError, AdjudicationRequest};
use crate::model::ComplicationKind;
use crate::phantom::TruthInterval;

pub const ENDPOINT_ENV: &str = "CCD_VLM_ENDPOINT";
pub const API_KEY_ENV: &str = "CCD_VLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Worth retrying: connection failure, timeout, 429 or 5xx.
    Transient(String),
    Fatal(String),
}

pub trait VisionBackend: Send + Sync {
    fn complete(&self, request: &AdjudicationRequest, model: &str) -> Result<String, TransportError>;
}

/// OpenAI-style chat-completions client. The crop travels as a base64 PNG
/// data URL next to the prompt text.
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    extra: Map<String, Value>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// `extra` is merged into every request body as-is (e.g. reasoning
    /// options); it is never interpreted here.
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        extra: Map<String, Value>,
        timeout: Duration,
    ) -> Result<Self, AdjudicationError> {
        let endpoint = endpoint.into();
        if endpoint.trim().is_empty() {
            return Err(AdjudicationError::Misconfigured("empty endpoint URL".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| AdjudicationError::Misconfigured(e.to_string()))?;
        Ok(Self {
            endpoint,
            api_key,
            extra,
            client,
        })
    }

    pub fn from_env(extra: Map<String, Value>, timeout: Duration) -> Result<Self, AdjudicationError> {
        let endpoint = std::env::var(ENDPOINT_ENV).map_err(|_| {
            AdjudicationError::Misconfigured(format!("{ENDPOINT_ENV} is not set and no mock is enabled"))
        })?;
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok(), extra, timeout)
    }

    pub fn request_body(&self, request: &AdjudicationRequest, model: &str) -> Result<Value, TransportError> {
        let mut png = Vec::new();
        image::DynamicImage::ImageRgb8(request.crop.clone())
            .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| TransportError::Fatal(format!("encoding crop: {e}")))?;
        let url = format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(&png)
        );
        let mut body = json!({
            "model": model,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": request.prompt_text},
                    {"type": "image_url", "image_url": {"url": url}},
                ],
            }],
        });
        let obj = body.as_object_mut().expect("literal object");
        for (k, v) in &self.extra {
            obj.insert(k.clone(), v.clone());
        }
        Ok(body)
    }
}

/// Text of the first choice. Unexpected shapes yield the whole body, which
/// then fails parsing and goes down the re-ask path.
fn completion_text(body: &str) -> String {
    let Ok(value) = serde_json::from_str::<Value>(body) else {
        return body.to_string();
    };
    match &value["choices"][0]["message"]["content"] {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => body.to_string(),
    }
}

impl VisionBackend for HttpBackend {
    fn complete(&self, request: &AdjudicationRequest, model: &str) -> Result<String, TransportError> {
        let body = self.request_body(request, model)?;
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() {
                TransportError::Transient(e.to_string())
            } else {
                TransportError::Fatal(e.to_string())
            }
        })?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(TransportError::Fatal(format!("HTTP {status}: {text}")));
        }
        Ok(completion_text(&text))
    }
}

/// One line of a scripted-mock fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub video_id: String,
    pub kind: ComplicationKind,
    pub segment_index: usize,
    pub raw_response: String,
}

/// Replays fixture answers keyed by (video, kind, segment index).
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    responses: HashMap<(String, ComplicationKind, usize), String>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptedResponse>) -> Self {
        Self {
            responses: entries
                .into_iter()
                .map(|e| ((e.video_id, e.kind, e.segment_index), e.raw_response))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, AdjudicationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AdjudicationError::Misconfigured(format!("{}: {e}", path.display())))?;
        let entries: Vec<ScriptedResponse> = serde_json::from_str(&text)
            .map_err(|e| AdjudicationError::Misconfigured(format!("{}: {e}", path.display())))?;
        Ok(Self::new(entries))
    }
}

impl VisionBackend for ScriptedBackend {
    fn complete(&self, request: &AdjudicationRequest, _model: &str) -> Result<String, TransportError> {
        self.responses
            .get(&(request.video_id.clone(), request.kind, request.segment_index))
            .cloned()
            .ok_or_else(|| {
                TransportError::Fatal(format!(
                    "no scripted response for {} {} segment {}",
                    request.video_id, request.kind, request.segment_index
                ))
            })
    }
}

/// Answers from phantom ground truth: yes/high when the segment overlaps a
/// truth interval of its kind, no/high otherwise.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    truth: BTreeMap<String, Vec<TruthInterval>>,
}

impl OracleBackend {
    pub fn new(truth: BTreeMap<String, Vec<TruthInterval>>) -> Self {
        Self { truth }
    }

    pub fn insert(&mut self, video_id: impl Into<String>, intervals: Vec<TruthInterval>) {
        self.truth.insert(video_id.into(), intervals);
    }

    fn is_positive(&self, request: &AdjudicationRequest) -> bool {
        let seg = request.segment.range();
        self.truth.get(&request.video_id).is_some_and(|intervals| {
            intervals
                .iter()
                .any(|t| t.kind == request.kind && t.range().overlaps(&seg))
        })
    }
}

impl VisionBackend for OracleBackend {
    fn complete(&self, request: &AdjudicationRequest, _model: &str) -> Result<String, TransportError> {
        let positive = self.is_positive(request);
        let mut observations = BTreeMap::new();
        if request.kind == ComplicationKind::IrisProlapse {
            let text = if positive { "tissue outside the iris boundary" } else { "iris boundary intact" };
            observations.insert(DESCRIPTION_KEY.to_string(), Value::String(text.into()));
        }
        let verdict = ParsedVerdict {
            kind: request.kind,
            label: if positive { Label::Yes } else { Label::No },
            confidence: Confidence::High,
            reasons: vec![format!("phantom ground truth ({})", if positive { "overlap" } else { "clear" })],
            observations,
            notes: None,
            raw_response: String::new(),
        };
        Ok(render_response(&verdict))
    }
}
