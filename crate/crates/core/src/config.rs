//! Pipeline configuration as a flat `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is valid. [`PipelineConfig::set`] applies the
//! same keys one at a time, which is how command-line overrides work.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::adjudicator::AdjudicatorConfig;
use crate::model::ComplicationKind;
use crate::scoring::ScoringConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad value {value:?} for `{key}`: {message}")]
    InvalidValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VlmMode {
    /// Answers from each bundle's `truth.json`.
    Oracle,
    /// Answers replayed from `vlm.fixture`.
    Scripted,
    /// A chat-completions endpoint.
    Live,
}

impl FromStr for VlmMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(VlmMode::Oracle),
            "scripted" => Ok(VlmMode::Scripted),
            "live" => Ok(VlmMode::Live),
            _ => Err("expected oracle, scripted or live".into()),
        }
    }
}

impl VlmMode {
    fn as_str(self) -> &'static str {
        match self {
            VlmMode::Oracle => "oracle",
            VlmMode::Scripted => "scripted",
            VlmMode::Live => "live",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmConfig {
    pub mode: VlmMode,
    pub fixture: Option<PathBuf>,
    /// Overrides the endpoint environment variable when set.
    pub endpoint: Option<String>,
    pub timeout: Duration,
    /// Merged verbatim into every live request body.
    pub request_extra: Map<String, Value>,
    pub adjudicator: AdjudicatorConfig,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            mode: VlmMode::Live,
            fixture: None,
            endpoint: None,
            timeout: Duration::from_secs(120),
            request_extra: Map::new(),
            adjudicator: AdjudicatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Sliding-window length in frames.
    pub window: usize,
    /// Largest gap in frames bridged when merging segments.
    pub merge_gap: usize,
    pub top_k: usize,
    pub scoring: ScoringConfig,
    pub vlm: VlmConfig,
    pub output: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: 10,
            merge_gap: 10,
            top_k: 5,
            scoring: ScoringConfig::default(),
            vlm: VlmConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        message: e.to_string(),
    })
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies one `key=value` assignment, e.g. from `--set`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("override `{assignment}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let iris = &mut self.scoring.iris;
        let pcr = &mut self.scoring.pcr;
        let vit = &mut self.scoring.vitreous;
        let adj = &mut self.vlm.adjudicator;
        match key {
            "window" => self.window = parse(key, value)?,
            "merge_gap" => self.merge_gap = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "output" => self.output = PathBuf::from(value),

            "scoring.iris.band_fraction" => iris.band_fraction = parse(key, value)?,
            "scoring.iris.min_area" => iris.min_area = parse(key, value)?,
            "scoring.iris.max_area_fraction" => iris.max_area_fraction = parse(key, value)?,
            "scoring.iris.specular_value" => iris.specular_value = parse(key, value)?,
            "scoring.iris.hue_min" => iris.gate.hue_min = parse(key, value)?,
            "scoring.iris.hue_max" => iris.gate.hue_max = parse(key, value)?,
            "scoring.iris.saturation_min" => iris.gate.saturation_min = parse(key, value)?,
            "scoring.iris.value_min" => iris.gate.value_min = parse(key, value)?,
            "scoring.iris.value_max" => iris.gate.value_max = parse(key, value)?,
            "scoring.iris.threshold" => iris.threshold = parse(key, value)?,

            "scoring.pcr.high_threshold" => pcr.high_threshold = parse(key, value)?,
            "scoring.pcr.low_ratio" => pcr.low_ratio = parse(key, value)?,
            "scoring.pcr.min_edge_pixels" => pcr.min_edge_pixels = parse(key, value)?,
            "scoring.pcr.boundary_margin" => pcr.boundary_margin = parse(key, value)?,
            "scoring.pcr.threshold" => pcr.threshold = parse(key, value)?,

            "scoring.vitreous.sectors" => vit.sectors = parse(key, value)?,
            "scoring.vitreous.min_present_sectors" => vit.min_present_sectors = parse(key, value)?,
            "scoring.vitreous.threshold" => vit.threshold = parse(key, value)?,

            "vlm.mode" => self.vlm.mode = parse(key, value)?,
            "vlm.fixture" => self.vlm.fixture = (!value.is_empty()).then(|| PathBuf::from(value)),
            "vlm.endpoint" => self.vlm.endpoint = (!value.is_empty()).then(|| value.to_string()),
            "vlm.timeout_secs" => self.vlm.timeout = Duration::from_secs(parse(key, value)?),
            "vlm.request_extra" => {
                self.vlm.request_extra = match serde_json::from_str::<Value>(value) {
                    Ok(Value::Object(map)) => map,
                    _ => {
                        return Err(ConfigError::InvalidValue {
                            key: key.into(),
                            value: value.into(),
                            message: "expected a JSON object".into(),
                        })
                    }
                }
            }
            "vlm.max_retries" => adj.max_retries = parse(key, value)?,
            "vlm.backoff_ms" => adj.backoff = Duration::from_millis(parse(key, value)?),
            "vlm.max_concurrent" => adj.max_concurrent = parse(key, value)?,
            "vlm.margin_fraction" => adj.margin_fraction = parse(key, value)?,
            _ => match key.strip_prefix("vlm.model_for.") {
                Some(kind) => {
                    let kind: ComplicationKind = parse(key, kind)?;
                    *adj.models.get_mut(kind) = value.to_string();
                }
                None => return Err(ConfigError::UnknownKey(key.to_string())),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.window == 0 {
            return fail("window must be at least 1");
        }
        if self.top_k == 0 {
            return fail("top_k must be at least 1");
        }
        if self.scoring.vitreous.sectors == 0 {
            return fail("scoring.vitreous.sectors must be at least 1");
        }
        if self.vlm.mode == VlmMode::Scripted && self.vlm.fixture.is_none() {
            return fail("vlm.mode = scripted needs vlm.fixture");
        }
        if self.vlm.adjudicator.max_concurrent == 0 {
            return fail("vlm.max_concurrent must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.vlm.adjudicator.margin_fraction) {
            return fail("vlm.margin_fraction must be within [0, 1]");
        }
        Ok(())
    }

    /// Every key with its current value, in the file format.
    pub fn render(&self) -> String {
        let s = &self.scoring;
        let a = &self.vlm.adjudicator;
        let mut lines = vec![
            format!("window = {}", self.window),
            format!("merge_gap = {}", self.merge_gap),
            format!("top_k = {}", self.top_k),
            format!("output = {}", self.output.display()),
            format!("scoring.iris.band_fraction = {}", s.iris.band_fraction),
            format!("scoring.iris.min_area = {}", s.iris.min_area),
            format!("scoring.iris.max_area_fraction = {}", s.iris.max_area_fraction),
            format!("scoring.iris.specular_value = {}", s.iris.specular_value),
            format!("scoring.iris.hue_min = {}", s.iris.gate.hue_min),
            format!("scoring.iris.hue_max = {}", s.iris.gate.hue_max),
            format!("scoring.iris.saturation_min = {}", s.iris.gate.saturation_min),
            format!("scoring.iris.value_min = {}", s.iris.gate.value_min),
            format!("scoring.iris.value_max = {}", s.iris.gate.value_max),
            format!("scoring.iris.threshold = {}", s.iris.threshold),
            format!("scoring.pcr.high_threshold = {}", s.pcr.high_threshold),
            format!("scoring.pcr.low_ratio = {}", s.pcr.low_ratio),
            format!("scoring.pcr.min_edge_pixels = {}", s.pcr.min_edge_pixels),
            format!("scoring.pcr.boundary_margin = {}", s.pcr.boundary_margin),
            format!("scoring.pcr.threshold = {}", s.pcr.threshold),
            format!("scoring.vitreous.sectors = {}", s.vitreous.sectors),
            format!("scoring.vitreous.min_present_sectors = {}", s.vitreous.min_present_sectors),
            format!("scoring.vitreous.threshold = {}", s.vitreous.threshold),
            format!("vlm.mode = {}", self.vlm.mode.as_str()),
            format!(
                "vlm.fixture = {}",
                self.vlm.fixture.as_deref().map(|p| p.display().to_string()).unwrap_or_default()
            ),
            format!("vlm.endpoint = {}", self.vlm.endpoint.as_deref().unwrap_or_default()),
            format!("vlm.timeout_secs = {}", self.vlm.timeout.as_secs()),
            format!("vlm.request_extra = {}", Value::Object(self.vlm.request_extra.clone())),
        ];
        for kind in ComplicationKind::ALL {
            lines.push(format!("vlm.model_for.{kind} = {}", a.models.get(kind)));
        }
        lines.extend([
            format!("vlm.max_retries = {}", a.max_retries),
            format!("vlm.backoff_ms = {}", a.backoff.as_millis()),
            format!("vlm.max_concurrent = {}", a.max_concurrent),
            format!("vlm.margin_fraction = {}", a.margin_fraction),
        ]);
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut c = PipelineConfig::default();
        c.set("vlm.model_for.pcr", "other-model").unwrap();
        c.set("vlm.request_extra", r#"{"reasoning_effort":"high"}"#).unwrap();
        c.set("scoring.iris.threshold", "150").unwrap();
        c.set("vlm.fixture", "fx.json").unwrap();
        assert_eq!(PipelineConfig::from_text(&c.render()).unwrap(), c);
    }

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(PipelineConfig::from_text("# nothing\n\n").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn shipped_example_is_defaults() {
        let text = include_str!("../config/default.conf");
        assert_eq!(PipelineConfig::from_text(text).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn errors() {
        assert!(matches!(PipelineConfig::from_text("window 3"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(PipelineConfig::from_text("colour = red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(PipelineConfig::from_text("top_k = -1"), Err(ConfigError::InvalidValue { .. })));
        assert!(matches!(PipelineConfig::from_text("window = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(PipelineConfig::from_text("vlm.mode = scripted"), Err(ConfigError::Invalid(_))));
        assert!(matches!(
            PipelineConfig::from_text("vlm.model_for.cataract = x"),
            Err(ConfigError::InvalidValue { .. })
        ));
    }

    #[test]
    fn overrides() {
        let mut c = PipelineConfig::default();
        c.apply_override("vlm.mode=oracle").unwrap();
        c.apply_override("window = 4").unwrap();
        assert_eq!((c.vlm.mode, c.window), (VlmMode::Oracle, 4));
        assert!(c.apply_override("window").is_err());
    }
}
