//! Intraoperative complication detection for cataract-surgery video.
//!
//! Given a bundle of per-frame pupil and iris masks, colour frames and expert
//! phase annotations, the pipeline
//!
//! 1. restricts each complication to the frames where it can occur ([`scope`]),
//! 2. scores every scoped frame ([`scoring`]),
//! 3. flags sustained high-risk segments with a sliding window ([`segments`]),
//! 4. asks a vision-language model about the top segments ([`adjudicator`]),
//! 5. aggregates segment verdicts into a video label ([`decision`]).
//!
//! [`phantom`] renders synthetic bundles with known complications for testing.

pub mod adjudicator;
pub mod config;
pub mod decision;
pub mod geometry;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod scope;
pub mod scoring;
pub mod segments;

pub use adjudicator::{AdjudicationRequest, Confidence, Label, SegmentVerdict, VisionBackend};
pub use config::PipelineConfig;
pub use decision::{EvalReport, MetricsReport, VideoDecision};
pub use geometry::{BinaryMask, BoundingBox, RadiusProfile};
pub use model::{
    load_frame, load_manifest, load_mask, BundleError, ComplicationKind, FrameRange,
    PhaseAnnotation, PhaseName, Structure, VideoManifest,
};
pub use scope::{scope_frames, Scope};
pub use scoring::{FrameRisk, RiskDetail, ScoringConfig};
pub use phantom::{synth_bundle, AnomalySpec, PhantomSpec, TruthInterval};
pub use pipeline::{run_eval, run_video, PipelineError};
pub use segments::{HighRiskSegment, RiskTrace};
