//! Vision-language adjudication of high-risk segments.
//!
//! Each segment's representative frame is cropped around the eye and sent
//! with a complication-specific prompt. The answer is parsed into a
//! [`SegmentVerdict`]. Malformed answers are re-asked once and then degraded
//! to a low-confidence verdict, so model output never aborts a run.

mod backend;
mod crop;
mod parse;
mod prompts;

pub use backend::{
    HttpBackend, OracleBackend, ScriptedBackend, ScriptedResponse, TransportError, VisionBackend,
    API_KEY_ENV, ENDPOINT_ENV,
};
pub use crop::{crop_roi, roi_rect, CropRect};
pub use parse::{
    observation_schema, parse_iris_response, parse_response, parse_structured_response,
    render_response, Confidence, Label, ParseError, ParsedVerdict, DESCRIPTION_KEY,
    PARSE_FAILED_KEY,
};
pub use prompts::build_prompt;

use std::collections::BTreeMap;
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::BinaryMask;
use crate::model::ComplicationKind;
use crate::segments::HighRiskSegment;

#[derive(Debug, Error)]
pub enum AdjudicationError {
    #[error("both iris and pupil masks are empty on the representative frame")]
    BothMasksEmpty,
    #[error("the bundle has no frames to crop")]
    FramesUnavailable,
    #[error("endpoint unreachable after {attempts} attempts: {message}")]
    EndpointUnreachable { attempts: u32, message: String },
    #[error("endpoint rejected the request: {0}")]
    EndpointRejected(String),
    #[error("adjudicator misconfigured: {0}")]
    Misconfigured(String),
}

/// Model name per complication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMap {
    pub iris_prolapse: String,
    pub pcr: String,
    pub vitreous_loss: String,
}

impl Default for ModelMap {
    fn default() -> Self {
        Self {
            iris_prolapse: "gpt-5".into(),
            pcr: "gpt-5-mini".into(),
            vitreous_loss: "gpt-5-mini".into(),
        }
    }
}

impl ModelMap {
    pub fn get(&self, kind: ComplicationKind) -> &str {
        match kind {
            ComplicationKind::IrisProlapse => &self.iris_prolapse,
            ComplicationKind::Pcr => &self.pcr,
            ComplicationKind::VitreousLoss => &self.vitreous_loss,
        }
    }

    pub fn get_mut(&mut self, kind: ComplicationKind) -> &mut String {
        match kind {
            ComplicationKind::IrisProlapse => &mut self.iris_prolapse,
            ComplicationKind::Pcr => &mut self.pcr,
            ComplicationKind::VitreousLoss => &mut self.vitreous_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicatorConfig {
    pub models: ModelMap,
    /// Retries after the first attempt for transient transport failures.
    pub max_retries: u32,
    /// First retry delay; doubles on each further retry.
    pub backoff: Duration,
    pub max_concurrent: usize,
    pub margin_fraction: f64,
}

impl Default for AdjudicatorConfig {
    fn default() -> Self {
        Self {
            models: ModelMap::default(),
            max_retries: 3,
            backoff: Duration::from_millis(500),
            max_concurrent: 4,
            margin_fraction: 0.10,
        }
    }
}

pub struct AdjudicationRequest {
    pub kind: ComplicationKind,
    pub video_id: String,
    /// Position of the segment in the video's top-k list for `kind`.
    pub segment_index: usize,
    pub segment: HighRiskSegment,
    pub crop: RgbImage,
    pub crop_rect: CropRect,
    pub prompt_text: &'static str,
}

impl AdjudicationRequest {
    /// Crops the representative frame and attaches the catalog prompt.
    pub fn build(
        video_id: &str,
        segment_index: usize,
        segment: &HighRiskSegment,
        frame: Option<&RgbImage>,
        iris: &BinaryMask,
        pupil: &BinaryMask,
        margin_fraction: f64,
    ) -> Result<Self, AdjudicationError> {
        let (crop, crop_rect) = crop_roi(frame, iris, pupil, margin_fraction)?;
        Ok(Self {
            kind: segment.kind,
            video_id: video_id.to_string(),
            segment_index,
            segment: segment.clone(),
            crop,
            crop_rect,
            prompt_text: build_prompt(segment.kind),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub video_id: String,
    pub index: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    pub representative_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentVerdict {
    pub kind: ComplicationKind,
    pub segment: SegmentRef,
    pub label: Label,
    pub confidence: Confidence,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
    #[serde(default)]
    pub observations: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    #[serde(default)]
    pub model: String,
    pub raw_response: String,
}

impl SegmentVerdict {
    pub fn from_parsed(segment: SegmentRef, model: &str, parsed: ParsedVerdict) -> Self {
        Self {
            kind: parsed.kind,
            segment,
            label: parsed.label,
            confidence: parsed.confidence,
            reasons: parsed.reasons,
            observations: parsed.observations,
            notes: parsed.notes,
            model: model.to_string(),
            raw_response: parsed.raw_response,
        }
    }

    /// Stand-in for an answer that failed to parse twice. Iris answers are
    /// binary, so iris degrades to no/low; the others to unsure/low.
    pub fn degraded(kind: ComplicationKind, segment: SegmentRef, model: &str, raw: String, error: &ParseError) -> Self {
        let mut observations = BTreeMap::new();
        observations.insert(PARSE_FAILED_KEY.to_string(), Value::String(error.to_string()));
        Self {
            kind,
            segment,
            label: if kind == ComplicationKind::IrisProlapse { Label::No } else { Label::Unsure },
            confidence: Confidence::Low,
            reasons: Vec::new(),
            observations,
            notes: None,
            model: model.to_string(),
            raw_response: raw,
        }
    }

    pub fn parse_failed(&self) -> bool {
        self.observations.contains_key(PARSE_FAILED_KEY)
    }
}

fn segment_ref(request: &AdjudicationRequest) -> SegmentRef {
    SegmentRef {
        video_id: request.video_id.clone(),
        index: request.segment_index,
        start_frame: request.segment.start_frame,
        end_frame: request.segment.end_frame,
        representative_frame: request.segment.representative_frame,
    }
}

fn call_with_retries(
    request: &AdjudicationRequest,
    backend: &dyn VisionBackend,
    model: &str,
    config: &AdjudicatorConfig,
) -> Result<String, AdjudicationError> {
    let mut attempt = 0u32;
    loop {
        match backend.complete(request, model) {
            Ok(text) => return Ok(text),
            Err(TransportError::Fatal(message)) => {
                return Err(AdjudicationError::EndpointRejected(message))
            }
            Err(TransportError::Transient(message)) if attempt >= config.max_retries => {
                return Err(AdjudicationError::EndpointUnreachable {
                    attempts: attempt + 1,
                    message,
                })
            }
            Err(TransportError::Transient(message)) => {
                let delay = config.backoff.saturating_mul(1 << attempt.min(16));
                log::warn!(
                    "{} {} segment {}: {message}; retrying in {delay:?}",
                    request.video_id,
                    request.kind,
                    request.segment_index
                );
                std::thread::sleep(delay);
                attempt += 1;
            }
        }
    }
}

/// Sends one request, parsing the answer. Only transport and configuration
/// problems are errors.
pub fn adjudicate_segment(
    request: &AdjudicationRequest,
    backend: &dyn VisionBackend,
    config: &AdjudicatorConfig,
) -> Result<SegmentVerdict, AdjudicationError> {
    let model = config.models.get(request.kind);
    let mut failure = None;
    for _ask in 0..2 {
        let raw = call_with_retries(request, backend, model, config)?;
        match parse_response(request.kind, &raw) {
            Ok(parsed) => return Ok(SegmentVerdict::from_parsed(segment_ref(request), model, parsed)),
            Err(e) => {
                log::warn!(
                    "{} {} segment {}: unparseable answer ({e})",
                    request.video_id,
                    request.kind,
                    request.segment_index
                );
                failure = Some((raw, e));
            }
        }
    }
    let (raw, error) = failure.expect("loop ran twice without returning");
    Ok(SegmentVerdict::degraded(request.kind, segment_ref(request), model, raw, &error))
}

/// Adjudicates every request with at most `config.max_concurrent` in
/// flight. Verdicts come back in request order.
pub fn adjudicate_all(
    requests: &[AdjudicationRequest],
    backend: &dyn VisionBackend,
    config: &AdjudicatorConfig,
) -> Result<Vec<SegmentVerdict>, AdjudicationError> {
    let width = config.max_concurrent.max(1);
    let mut out = Vec::with_capacity(requests.len());
    for batch in requests.chunks(width) {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|r| s.spawn(move || adjudicate_segment(r, backend, config)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("adjudication thread panicked"))
                .collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}
