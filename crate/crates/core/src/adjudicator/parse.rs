//! Response parsing and rendering for the three prompt formats.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::ComplicationKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no PROLAPSE_DETECTED line in response")]
    MissingPrologue,
    #[error("PROLAPSE_DETECTED value {0:?} is neither YES nor NO")]
    InvalidDetection(String),
    #[error("no JSON object in response")]
    NoJson,
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
    #[error("invalid confidence {0:?}")]
    InvalidConfidence(String),
    #[error("{0} responses are not JSON-structured")]
    WrongFormat(ComplicationKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Yes,
    No,
    Unsure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Yes, Label::No, Label::Unsure];

    fn title(self) -> &'static str {
        match self {
            Label::Yes => "Yes",
            Label::No => "No",
            Label::Unsure => "Unsure",
        }
    }
}

impl Confidence {
    pub const ALL: [Confidence; 3] = [Confidence::High, Confidence::Medium, Confidence::Low];

    fn title(self) -> &'static str {
        match self {
            Confidence::High => "High",
            Confidence::Medium => "Medium",
            Confidence::Low => "Low",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

impl FromStr for Label {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Ok(Label::Yes),
            "no" => Ok(Label::No),
            "unsure" => Ok(Label::Unsure),
            _ => Err(ParseError::InvalidLabel(s.to_string())),
        }
    }
}

impl FromStr for Confidence {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(Confidence::High),
            "medium" => Ok(Confidence::Medium),
            "low" => Ok(Confidence::Low),
            _ => Err(ParseError::InvalidConfidence(s.to_string())),
        }
    }
}

/// Observation key set by the adjudicator when it gave up parsing.
pub const PARSE_FAILED_KEY: &str = "parse_failed";
/// Observation key holding the iris free-text description.
pub const DESCRIPTION_KEY: &str = "description";

const PCR_KEYS: &[&str] = &[
    "posterior_capsule_continuity",
    "radial_tears_or_folds",
    "lens_fragment_drop",
    "chamber_depth_change",
    "red_reflex_abnormality",
    "instrument_or_fluid_action",
    "view_obstruction",
];

const VITREOUS_KEYS: &[&str] = &[
    "pupil_shape",
    "pupil_apex_sharp",
    "instrument_or_fluid_action",
    "ovd_jet_visible",
    "iris_prolapse_signs",
    "pcr_signs",
    "vitreous_strands_visible",
    "wound_attachment_of_strands",
    "frame_quality_issues",
];

/// Observation keys a verdict of this kind may carry.
pub fn observation_schema(kind: ComplicationKind) -> &'static [&'static str] {
    match kind {
        ComplicationKind::IrisProlapse => &[DESCRIPTION_KEY],
        ComplicationKind::Pcr => PCR_KEYS,
        ComplicationKind::VitreousLoss => VITREOUS_KEYS,
    }
}

/// A model answer reduced to its decision-relevant fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedVerdict {
    pub kind: ComplicationKind,
    pub label: Label,
    pub confidence: Confidence,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
    #[serde(default)]
    pub observations: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub raw_response: String,
}

impl ParsedVerdict {
    /// Field-wise equality ignoring `raw_response`.
    pub fn same_decision(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.label == other.label
            && self.confidence == other.confidence
            && self.reasons == other.reasons
            && self.observations == other.observations
            && self.notes == other.notes
    }
}

/// Key of a `KEY: value` line, normalised to upper snake case, with markdown
/// decoration stripped. `None` for lines without a colon.
fn split_field(line: &str) -> Option<(String, &str)> {
    let trimmed = line.trim_start_matches(|c: char| c.is_whitespace() || "*#->`_".contains(c));
    let (key, value) = trimmed.split_once(':')?;
    let key: String = key
        .trim()
        .trim_matches(|c: char| "*`_".contains(c))
        .trim()
        .chars()
        .map(|c| if c.is_whitespace() { '_' } else { c.to_ascii_uppercase() })
        .collect();
    Some((key, value))
}

fn clean_value(value: &str) -> &str {
    value
        .trim()
        .trim_matches(|c: char| c.is_whitespace() || "*`[]\"'".contains(c))
        .trim()
}

/// Leading alphabetic word of a value, e.g. `YES` from `[YES] - obvious`.
fn first_word(value: &str) -> &str {
    let v = clean_value(value);
    let end = v.find(|c: char| !c.is_ascii_alphabetic()).unwrap_or(v.len());
    &v[..end]
}

/// Parses the `PROLAPSE_DETECTED / CONFIDENCE / DESCRIPTION` format.
///
/// Keys are matched case-insensitively. A missing or unrecognised
/// `CONFIDENCE` becomes `Low`. The description may continue over following
/// lines until the next recognised key.
pub fn parse_iris_response(raw: &str) -> Result<ParsedVerdict, ParseError> {
    let mut detected: Option<&str> = None;
    let mut confidence: Option<Confidence> = None;
    let mut description: Option<Vec<String>> = None;
    let mut in_description = false;
    for line in raw.lines() {
        let field = split_field(line);
        match field.as_ref().map(|(k, v)| (k.as_str(), *v)) {
            Some(("PROLAPSE_DETECTED", v)) => {
                in_description = false;
                detected.get_or_insert(v);
            }
            Some(("CONFIDENCE", v)) => {
                in_description = false;
                if confidence.is_none() {
                    confidence = first_word(v).parse().ok();
                }
            }
            Some(("DESCRIPTION", v)) if description.is_none() => {
                in_description = true;
                description = Some(vec![clean_value(v).to_string()]);
            }
            _ if in_description => {
                if let Some(d) = description.as_mut() {
                    d.push(line.trim().to_string());
                }
            }
            _ => {}
        }
    }
    let detected = detected.ok_or(ParseError::MissingPrologue)?;
    let label = match first_word(detected).to_ascii_lowercase().as_str() {
        "yes" => Label::Yes,
        "no" => Label::No,
        _ => return Err(ParseError::InvalidDetection(clean_value(detected).to_string())),
    };
    let mut observations = BTreeMap::new();
    if let Some(lines) = description {
        let text = lines.join("\n").trim().to_string();
        if !text.is_empty() {
            observations.insert(DESCRIPTION_KEY.to_string(), Value::String(text));
        }
    }
    Ok(ParsedVerdict {
        kind: ComplicationKind::IrisProlapse,
        label,
        confidence: confidence.unwrap_or(Confidence::Low),
        reasons: Vec::new(),
        observations,
        notes: None,
        raw_response: raw.to_string(),
    })
}

/// First `{...}` in `raw` that parses as a JSON object. Prose and code fences
/// around it are skipped.
fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    raw.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

fn string_field<'a>(obj: &'a Map<String, Value>, key: &'static str) -> Result<&'a str, ParseError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(match key {
            "label" => ParseError::InvalidLabel(other.to_string()),
            _ => ParseError::InvalidConfidence(other.to_string()),
        }),
        None => Err(ParseError::MissingField(key)),
    }
}

/// Parses the JSON format shared by the PCR and vitreous prompts.
///
/// Observation keys outside the kind's schema are dropped (they remain in
/// `raw_response`).
pub fn parse_structured_response(
    kind: ComplicationKind,
    raw: &str,
) -> Result<ParsedVerdict, ParseError> {
    if kind == ComplicationKind::IrisProlapse {
        return Err(ParseError::WrongFormat(kind));
    }
    let obj = first_json_object(raw).ok_or(ParseError::NoJson)?;
    let label: Label = string_field(&obj, "label")?.parse()?;
    let confidence: Confidence = string_field(&obj, "confidence")?.parse()?;
    let reasons = match obj.get("reasons") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect(),
        Some(Value::String(s)) => vec![s.clone()],
        _ => Vec::new(),
    };
    let schema = observation_schema(kind);
    let observations = match obj.get("observations") {
        Some(Value::Object(map)) => map
            .iter()
            .filter(|(k, _)| schema.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
        _ => BTreeMap::new(),
    };
    let notes = match obj.get("notes") {
        Some(Value::String(s)) => Some(s.clone()),
        _ => None,
    };
    Ok(ParsedVerdict {
        kind,
        label,
        confidence,
        reasons,
        observations,
        notes,
        raw_response: raw.to_string(),
    })
}

/// Dispatches on kind to the matching parser.
pub fn parse_response(kind: ComplicationKind, raw: &str) -> Result<ParsedVerdict, ParseError> {
    match kind {
        ComplicationKind::IrisProlapse => parse_iris_response(raw),
        _ => parse_structured_response(kind, raw),
    }
}

/// Renders a verdict in the textual format its prompt asks for. Iris verdicts
/// with label `Unsure` have no textual form and render as `NO`.
pub fn render_response(verdict: &ParsedVerdict) -> String {
    match verdict.kind {
        ComplicationKind::IrisProlapse => {
            let detected = if verdict.label == Label::Yes { "YES" } else { "NO" };
            let mut out = format!(
                "PROLAPSE_DETECTED: {detected}\nCONFIDENCE: {}\n",
                verdict.confidence
            );
            if let Some(Value::String(d)) = verdict.observations.get(DESCRIPTION_KEY) {
                out.push_str("DESCRIPTION: ");
                out.push_str(d);
                out.push('\n');
            }
            out
        }
        _ => {
            let mut obj = Map::new();
            obj.insert("label".into(), Value::String(verdict.label.to_string()));
            obj.insert("confidence".into(), Value::String(verdict.confidence.to_string()));
            obj.insert(
                "reasons".into(),
                Value::Array(verdict.reasons.iter().cloned().map(Value::String).collect()),
            );
            obj.insert(
                "observations".into(),
                Value::Object(verdict.observations.clone().into_iter().collect()),
            );
            if let Some(n) = &verdict.notes {
                obj.insert("notes".into(), Value::String(n.clone()));
            }
            serde_json::to_string_pretty(&Value::Object(obj)).expect("JSON values always serialize")
        }
    }
}
