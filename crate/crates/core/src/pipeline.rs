//! End-to-end orchestration: scope, score, segment, adjudicate, decide.
//!
//! Each stage is a separate function so it can be run on its own. A video
//! run writes
//!
//! ```text
//! <output>/<video_id>/traces/<kind>.csv
//! <output>/<video_id>/segments.json
//! <output>/<video_id>/verdicts.json
//! <output>/<video_id>/decision.json
//! ```
//!
//! and corpus evaluation adds `<output>/report.json` and `<output>/report.txt`.
//! `segments.json` and `verdicts.json` are enough to recompute decisions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjudicator::{
    adjudicate_all, AdjudicationError, AdjudicationRequest, AdjudicatorConfig, HttpBackend,
    OracleBackend, ScriptedBackend, SegmentVerdict, VisionBackend,
};
use crate::config::{ConfigError, PipelineConfig, VlmConfig, VlmMode};
use crate::decision::{aggregate_video, evaluate, load_labels, render_text, DecisionError, EvalReport, VideoDecision};
use crate::geometry::BinaryMask;
use crate::model::{load_frame, load_manifest, load_mask, BundleError, ComplicationKind, Structure, VideoManifest, MANIFEST_FILE};
use crate::phantom::{load_truth, PhantomError};
use crate::scope::{scope_frames, Scope};
use crate::scoring::{score_iris_prolapse, score_pcr, score_vitreous, FrameRisk, ScoreError, ScoringConfig};
use crate::segments::{flag_segments, merge_segments, select_top_k, HighRiskSegment, RiskTrace, TraceError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{video_id}: {source}")]
    Bundle { video_id: String, source: BundleError },
    #[error("{video_id}: {kind}: {source}")]
    Score {
        video_id: String,
        kind: ComplicationKind,
        source: ScoreError,
    },
    #[error("{video_id}: {source}")]
    Trace { video_id: String, source: TraceError },
    #[error("{video_id}: {source}")]
    Adjudication {
        video_id: String,
        source: AdjudicationError,
    },
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl PipelineError {
    /// 1 usage or configuration, 2 data, 3 endpoint.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Adjudication { source, .. } => match source {
                AdjudicationError::Misconfigured(_) => 1,
                AdjudicationError::EndpointUnreachable { .. } | AdjudicationError::EndpointRejected(_) => 3,
                AdjudicationError::BothMasksEmpty | AdjudicationError::FramesUnavailable => 2,
            },
            _ => 2,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// Scope and trace for one complication. `trace` is `None` when the scope
/// is not applicable or empty.
#[derive(Debug, Clone, PartialEq)]
pub struct KindTrace {
    pub kind: ComplicationKind,
    pub scope: Scope,
    pub trace: Option<RiskTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSegments {
    pub kind: ComplicationKind,
    pub scope: Scope,
    pub segments: Vec<HighRiskSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentsFile {
    pub video_id: String,
    pub kinds: Vec<KindSegments>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRun {
    pub video_id: String,
    pub traces: Vec<KindTrace>,
    pub segments: SegmentsFile,
    pub verdicts: Vec<SegmentVerdict>,
    pub decisions: Vec<VideoDecision>,
}

struct FrameInputs {
    frame: Option<RgbImage>,
    pupil: Option<BinaryMask>,
    iris: Option<BinaryMask>,
}

fn needs_frame(kind: ComplicationKind) -> bool {
    kind != ComplicationKind::VitreousLoss
}

fn score_one(
    kind: ComplicationKind,
    index: usize,
    inputs: &FrameInputs,
    scoring: &ScoringConfig,
) -> Result<FrameRisk, ScoreError> {
    let mask = |m: &Option<BinaryMask>| m.as_ref().expect("loaded for in-scope kinds").clone();
    match kind {
        ComplicationKind::IrisProlapse => {
            let frame = inputs.frame.as_ref().ok_or(ScoreError::FramesUnavailable)?;
            Ok(score_iris_prolapse(index, frame, &mask(&inputs.iris), &scoring.iris))
        }
        ComplicationKind::Pcr => score_pcr(index, inputs.frame.as_ref(), &mask(&inputs.pupil), &scoring.pcr),
        ComplicationKind::VitreousLoss => Ok(score_vitreous(index, &mask(&inputs.pupil), &scoring.vitreous)),
    }
}

/// Scores every scoped frame for the requested complications. Each frame's
/// images are loaded once and shared by all scorers; frames run in parallel.
pub fn score_video(
    manifest: &VideoManifest,
    kinds: &[ComplicationKind],
    scoring: &ScoringConfig,
) -> Result<Vec<KindTrace>, PipelineError> {
    let video_id = &manifest.video_id;
    let scopes: Vec<(ComplicationKind, Scope)> = kinds.iter().map(|&k| (k, scope_frames(manifest, k))).collect();
    let ranges: Vec<_> = scopes.iter().filter_map(|(k, s)| s.range().map(|r| (*k, r))).collect();
    for &(kind, range) in &ranges {
        if needs_frame(kind) && !manifest.has_frames && !range.is_empty() {
            return Err(PipelineError::Score {
                video_id: video_id.clone(),
                kind,
                source: ScoreError::FramesUnavailable,
            });
        }
    }
    let lo = ranges.iter().map(|(_, r)| r.start).min().unwrap_or(0);
    let hi = ranges.iter().map(|(_, r)| r.end).max().unwrap_or(0);

    let per_frame: Vec<Vec<(ComplicationKind, FrameRisk)>> = (lo..hi)
        .into_par_iter()
        .map(|index| {
            let active: Vec<ComplicationKind> =
                ranges.iter().filter(|(_, r)| r.contains(index)).map(|(k, _)| *k).collect();
            let bundle_err = |source| PipelineError::Bundle {
                video_id: video_id.clone(),
                source,
            };
            let wants = |f: &dyn Fn(ComplicationKind) -> bool| active.iter().any(|&k| f(k));
            let inputs = FrameInputs {
                frame: if wants(&needs_frame) {
                    Some(load_frame(manifest, index).map_err(bundle_err)?)
                } else {
                    None
                },
                pupil: if wants(&|k| k != ComplicationKind::IrisProlapse) {
                    Some(load_mask(manifest, Structure::Pupil, index).map_err(bundle_err)?)
                } else {
                    None
                },
                iris: if wants(&|k| k == ComplicationKind::IrisProlapse) {
                    Some(load_mask(manifest, Structure::Iris, index).map_err(bundle_err)?)
                } else {
                    None
                },
            };
            active
                .iter()
                .map(|&kind| {
                    score_one(kind, index, &inputs, scoring)
                        .map(|risk| (kind, risk))
                        .map_err(|source| PipelineError::Score {
                            video_id: video_id.clone(),
                            kind,
                            source,
                        })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let mut buckets: BTreeMap<ComplicationKind, Vec<FrameRisk>> = BTreeMap::new();
    for (kind, risk) in per_frame.into_iter().flatten() {
        buckets.entry(kind).or_default().push(risk);
    }
    scopes
        .into_iter()
        .map(|(kind, scope)| {
            let trace = match scope.range() {
                Some(range) if !range.is_empty() => Some(
                    RiskTrace::new(kind, range, buckets.remove(&kind).unwrap_or_default()).map_err(|source| {
                        PipelineError::Trace {
                            video_id: video_id.clone(),
                            source,
                        }
                    })?,
                ),
                _ => None,
            };
            Ok(KindTrace { kind, scope, trace })
        })
        .collect()
}

/// Window, flag, merge and keep the top-k segments of one trace.
pub fn detect_segments(trace: &RiskTrace, config: &PipelineConfig) -> Vec<HighRiskSegment> {
    let threshold = config.scoring.threshold(trace.kind);
    let flagged = flag_segments(trace, config.window, threshold);
    let merged = merge_segments(flagged, config.merge_gap);
    select_top_k(&merged, config.top_k)
}

pub fn segment_video(video_id: &str, traces: &[KindTrace], config: &PipelineConfig) -> SegmentsFile {
    SegmentsFile {
        video_id: video_id.to_string(),
        kinds: traces
            .iter()
            .map(|t| KindSegments {
                kind: t.kind,
                scope: t.scope,
                segments: t.trace.as_ref().map(|tr| detect_segments(tr, config)).unwrap_or_default(),
            })
            .collect(),
    }
}

/// Crops each segment's representative frame and asks the backend about it.
/// Verdicts come back grouped by kind, in segment order.
pub fn adjudicate_video(
    manifest: &VideoManifest,
    segments: &SegmentsFile,
    backend: &dyn VisionBackend,
    config: &AdjudicatorConfig,
) -> Result<Vec<SegmentVerdict>, PipelineError> {
    let video_id = &manifest.video_id;
    let mut requests = Vec::new();
    for ks in &segments.kinds {
        for (index, seg) in ks.segments.iter().enumerate() {
            let f = seg.representative_frame;
            let bundle_err = |source| PipelineError::Bundle {
                video_id: video_id.clone(),
                source,
            };
            let frame = match load_frame(manifest, f) {
                Ok(img) => Some(img),
                Err(BundleError::FramesUnavailable) => None,
                Err(e) => return Err(bundle_err(e)),
            };
            let iris = load_mask(manifest, Structure::Iris, f).map_err(bundle_err)?;
            let pupil = load_mask(manifest, Structure::Pupil, f).map_err(bundle_err)?;
            let request = AdjudicationRequest::build(
                video_id,
                index,
                seg,
                frame.as_ref(),
                &iris,
                &pupil,
                config.margin_fraction,
            )
            .map_err(|source| PipelineError::Adjudication {
                video_id: video_id.clone(),
                source,
            })?;
            requests.push(request);
        }
    }
    adjudicate_all(&requests, backend, config).map_err(|source| PipelineError::Adjudication {
        video_id: video_id.clone(),
        source,
    })
}

/// Video-level decisions from the stored segment and verdict artifacts.
pub fn decide_video(segments: &SegmentsFile, verdicts: &[SegmentVerdict]) -> Result<Vec<VideoDecision>, DecisionError> {
    segments
        .kinds
        .iter()
        .map(|ks| match ks.scope {
            Scope::NotApplicable => Ok(VideoDecision::scoped_out(&segments.video_id, ks.kind)),
            Scope::Range(_) => {
                let mine: Vec<SegmentVerdict> = verdicts.iter().filter(|v| v.kind == ks.kind).cloned().collect();
                aggregate_video(&segments.video_id, ks.kind, &mine)
            }
        })
        .collect()
}

/// Backend selected by `vlm.mode`. Oracle mode reads `truth.json` from each
/// bundle in `manifests`.
pub fn build_backend(vlm: &VlmConfig, manifests: &[&VideoManifest]) -> Result<Box<dyn VisionBackend>, PipelineError> {
    let misconfigured = |message: String| PipelineError::Adjudication {
        video_id: String::new(),
        source: AdjudicationError::Misconfigured(message),
    };
    match vlm.mode {
        VlmMode::Oracle => {
            let mut oracle = OracleBackend::default();
            for m in manifests {
                let truth = load_truth(&m.root)
                    .map_err(|e| misconfigured(format!("oracle mode needs ground truth: {e}")))?;
                oracle.insert(m.video_id.clone(), truth);
            }
            Ok(Box::new(oracle))
        }
        VlmMode::Scripted => {
            let path = vlm
                .fixture
                .as_deref()
                .ok_or_else(|| misconfigured("scripted mode needs vlm.fixture".into()))?;
            ScriptedBackend::load(path)
                .map(|b| Box::new(b) as Box<dyn VisionBackend>)
                .map_err(|source| PipelineError::Adjudication {
                    video_id: String::new(),
                    source,
                })
        }
        VlmMode::Live => {
            let backend = match &vlm.endpoint {
                Some(url) => HttpBackend::new(
                    url.clone(),
                    std::env::var(crate::adjudicator::API_KEY_ENV).ok(),
                    vlm.request_extra.clone(),
                    vlm.timeout,
                ),
                None => HttpBackend::from_env(vlm.request_extra.clone(), vlm.timeout),
            };
            backend
                .map(|b| Box::new(b) as Box<dyn VisionBackend>)
                .map_err(|source| PipelineError::Adjudication {
                    video_id: String::new(),
                    source,
                })
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("artifacts serialize") + "\n";
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::io(path, e))
}

pub fn write_traces(dir: &Path, traces: &[KindTrace]) -> Result<(), PipelineError> {
    let dir = dir.join("traces");
    fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    for t in traces {
        if let Some(trace) = &t.trace {
            let path = dir.join(format!("{}.csv", t.kind));
            fs::write(&path, trace.to_csv()).map_err(|e| PipelineError::io(&path, e))?;
        }
    }
    Ok(())
}

/// Reads traces written by [`write_traces`], checking each against the
/// manifest's scope.
pub fn read_traces(manifest: &VideoManifest, video_dir: &Path) -> Result<Vec<KindTrace>, PipelineError> {
    ComplicationKind::ALL
        .into_iter()
        .map(|kind| {
            let scope = scope_frames(manifest, kind);
            let trace = match scope.range() {
                Some(range) if !range.is_empty() => {
                    let path = video_dir.join("traces").join(format!("{kind}.csv"));
                    let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
                    let trace_err = |source| PipelineError::Trace {
                        video_id: manifest.video_id.clone(),
                        source,
                    };
                    let trace = RiskTrace::from_csv(kind, &text).map_err(trace_err)?;
                    if trace.scope != range {
                        return Err(trace_err(TraceError::NotDense {
                            scope: range,
                            reason: format!("{} covers [{}, {})", path.display(), trace.scope.start, trace.scope.end),
                        }));
                    }
                    Some(trace)
                }
                _ => None,
            };
            Ok(KindTrace { kind, scope, trace })
        })
        .collect()
}

/// All stages for one loaded bundle, writing artifacts under
/// `config.output/<video_id>/`.
pub fn run_video_with(
    manifest: &VideoManifest,
    config: &PipelineConfig,
    backend: &dyn VisionBackend,
) -> Result<VideoRun, PipelineError> {
    let traces = score_video(manifest, &ComplicationKind::ALL, &config.scoring)?;
    let segments = segment_video(&manifest.video_id, &traces, config);
    let verdicts = adjudicate_video(manifest, &segments, backend, &config.vlm.adjudicator)?;
    let decisions = decide_video(&segments, &verdicts)?;

    let dir = config.output.join(&manifest.video_id);
    write_traces(&dir, &traces)?;
    write_json(&dir.join("segments.json"), &segments)?;
    write_json(&dir.join("verdicts.json"), &verdicts)?;
    write_json(&dir.join("decision.json"), &decisions)?;
    log::info!(
        "{}: {}",
        manifest.video_id,
        decisions
            .iter()
            .map(|d| format!("{}={}", d.kind, d.label))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(VideoRun {
        video_id: manifest.video_id.clone(),
        traces,
        segments,
        verdicts,
        decisions,
    })
}

/// Loads the bundle at `manifest_path`, builds the configured backend and
/// runs every stage.
pub fn run_video(manifest_path: &Path, config: &PipelineConfig) -> Result<VideoRun, PipelineError> {
    let manifest = load_manifest(manifest_path).map_err(|source| PipelineError::Bundle {
        video_id: manifest_path.display().to_string(),
        source,
    })?;
    let backend = build_backend(&config.vlm, &[&manifest])?;
    run_video_with(&manifest, config, backend.as_ref())
}

/// Bundle directories directly under `corpus_dir`, sorted by name.
pub fn corpus_bundles(corpus_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = fs::read_dir(corpus_dir).map_err(|e| PipelineError::io(corpus_dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| PipelineError::io(corpus_dir, e))?.path();
        if path.join(MANIFEST_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Runs every bundle in `corpus_dir` (up to `jobs` at once), evaluates the
/// decisions against `labels_path`, and writes `report.json` and
/// `report.txt` under `config.output`.
pub fn run_eval(
    corpus_dir: &Path,
    labels_path: &Path,
    config: &PipelineConfig,
    jobs: usize,
) -> Result<EvalReport, PipelineError> {
    let dirs = corpus_bundles(corpus_dir)?;
    if dirs.is_empty() {
        return Err(DecisionError::EmptyInput.into());
    }
    let labels = load_labels(labels_path)?;
    let manifests = dirs
        .iter()
        .map(|d| {
            load_manifest(d).map_err(|source| PipelineError::Bundle {
                video_id: d.display().to_string(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(m) = manifests.iter().find(|m| !labels.contains_key(&m.video_id)) {
        return Err(DecisionError::LabelMissing(m.video_id.clone()).into());
    }
    let refs: Vec<&VideoManifest> = manifests.iter().collect();
    let backend = build_backend(&config.vlm, &refs)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Config(ConfigError::Invalid(e.to_string())))?;
    let runs: Vec<VideoRun> = pool.install(|| {
        manifests
            .par_iter()
            .map(|m| run_video_with(m, config, backend.as_ref()))
            .collect::<Result<_, _>>()
    })?;
    let report = evaluate(
        runs.into_iter().map(|r| (r.video_id, r.decisions)).collect(),
        &labels,
    )?;
    write_json(&config.output.join("report.json"), &report)?;
    let text_path = config.output.join("report.txt");
    fs::write(&text_path, render_text(&report)).map_err(|e| PipelineError::io(&text_path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PhaseAnnotation, PhaseName};
    use crate::phantom::{synth_bundle, PhantomSpec, TruthInterval};

    fn phases() -> Vec<PhaseAnnotation> {
        vec![
            PhaseAnnotation {
                phase_name: PhaseName::CorticalWash,
                start_frame: 10,
                end_frame: 50,
            },
            PhaseAnnotation {
                phase_name: PhaseName::ArtificialLensInsertion,
                start_frame: 50,
                end_frame: 60,
            },
        ]
    }

    fn small(id: &str, anomalies: Vec<TruthInterval>) -> PhantomSpec {
        PhantomSpec {
            width: 320,
            height: 240,
            iris_radius: 100.0,
            pupil_radius: 40.0,
            phases: phases(),
            anomalies,
            ..PhantomSpec::new(id, 60)
        }
    }

    fn oracle_config(out: &Path) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.vlm.mode = VlmMode::Oracle;
        c.output = out.to_path_buf();
        c
    }

    #[test]
    fn clean_phantom_is_negative_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = dir.path().join("clean");
        synth_bundle(&small("clean", vec![]), &bundle).unwrap();
        let run = run_video(&bundle, &oracle_config(&dir.path().join("out"))).unwrap();
        assert!(run.decisions.iter().all(|d| !d.label));
        assert!(run.verdicts.is_empty());
    }

    #[test]
    fn pcr_line_is_found_and_decided() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = dir.path().join("pcr");
        let spec = small("pcr", vec![TruthInterval::new(ComplicationKind::Pcr, 20, 40, 60.0)]);
        synth_bundle(&spec, &bundle).unwrap();
        let out = dir.path().join("out");
        let run = run_video(&bundle, &oracle_config(&out)).unwrap();
        let labels: Vec<bool> = run.decisions.iter().map(|d| d.label).collect();
        assert_eq!(labels, vec![false, true, false]);
        for f in ["segments.json", "verdicts.json", "decision.json", "traces/pcr.csv"] {
            assert!(out.join("pcr").join(f).is_file(), "{f}");
        }
        // decisions are recomputable from artifacts alone
        let segs: SegmentsFile = read_json(&out.join("pcr/segments.json")).unwrap();
        let verdicts: Vec<SegmentVerdict> = read_json(&out.join("pcr/verdicts.json")).unwrap();
        assert_eq!(decide_video(&segs, &verdicts).unwrap(), run.decisions);
    }

    #[test]
    fn live_mode_without_endpoint_is_misconfigured() {
        std::env::remove_var(crate::adjudicator::ENDPOINT_ENV);
        let err = build_backend(&VlmConfig::default(), &[]).err().unwrap();
        assert_eq!(err.exit_code(), 1);
    }
}
