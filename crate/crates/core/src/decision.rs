//! Video-level labels from segment verdicts, and corpus metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjudicator::{Confidence, Label, SegmentVerdict};
use crate::model::ComplicationKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("verdict for {found} passed to the {expected} aggregator")]
    MixedKinds {
        expected: ComplicationKind,
        found: ComplicationKind,
    },
    #[error("no decisions to evaluate")]
    EmptyInput,
    #[error("labels file has no entry for video `{0}`")]
    LabelMissing(String),
    #[error("labels file {path}: {message}")]
    Labels { path: String, message: String },
}

/// How far a video got through the pipeline for one complication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// The phases the complication depends on are missing.
    ScopedOut,
    /// Risk scoring flagged no segment.
    NoSegments,
    Adjudicated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoDecision {
    pub video_id: String,
    pub kind: ComplicationKind,
    pub label: bool,
    pub stage: Stage,
    /// Verdicts that made the label true; empty when it is false.
    pub basis: Vec<SegmentVerdict>,
}

impl VideoDecision {
    pub fn scoped_out(video_id: &str, kind: ComplicationKind) -> Self {
        Self {
            video_id: video_id.to_string(),
            kind,
            label: false,
            stage: Stage::ScopedOut,
            basis: Vec::new(),
        }
    }
}

/// Verdicts that satisfy the positivity rule for `kind`; empty means negative.
///
/// - iris prolapse: any `yes`;
/// - PCR: any `yes` or `unsure`;
/// - vitreous loss: any `yes`/high, or at least two `yes`/medium. `yes`/low
///   never counts.
pub fn positive_basis(kind: ComplicationKind, verdicts: &[SegmentVerdict]) -> Vec<SegmentVerdict> {
    let pick = |f: &dyn Fn(&SegmentVerdict) -> bool| verdicts.iter().filter(|v| f(v)).cloned().collect::<Vec<_>>();
    match kind {
        ComplicationKind::IrisProlapse => pick(&|v| v.label == Label::Yes),
        ComplicationKind::Pcr => pick(&|v| matches!(v.label, Label::Yes | Label::Unsure)),
        ComplicationKind::VitreousLoss => {
            let high = pick(&|v| v.label == Label::Yes && v.confidence == Confidence::High);
            if !high.is_empty() {
                return high;
            }
            let medium = pick(&|v| v.label == Label::Yes && v.confidence == Confidence::Medium);
            if medium.len() >= 2 {
                medium
            } else {
                Vec::new()
            }
        }
    }
}

pub fn aggregate_video(
    video_id: &str,
    kind: ComplicationKind,
    verdicts: &[SegmentVerdict],
) -> Result<VideoDecision, DecisionError> {
    if let Some(v) = verdicts.iter().find(|v| v.kind != kind) {
        return Err(DecisionError::MixedKinds {
            expected: kind,
            found: v.kind,
        });
    }
    let basis = positive_basis(kind, verdicts);
    Ok(VideoDecision {
        video_id: video_id.to_string(),
        kind,
        label: !basis.is_empty(),
        stage: if verdicts.is_empty() { Stage::NoSegments } else { Stage::Adjudicated },
        basis,
    })
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: ComplicationKind,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Percentages rounded to two decimals. A zero denominator gives 0.
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
}

impl MetricsReport {
    pub fn from_counts(kind: ComplicationKind, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        Self {
            kind,
            tp,
            fp,
            tn,
            fn_,
            accuracy: round2(percent(tp + tn, tp + fp + tn + fn_)),
            sensitivity: round2(percent(tp, tp + fn_)),
            specificity: round2(percent(tn, tn + fp)),
            f1: round2(percent(2 * tp, 2 * tp + fp + fn_)),
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Unrounded `[accuracy, sensitivity, specificity, f1]`.
    fn exact(&self) -> [f64; 4] {
        let (tp, fp, tn, fn_) = (self.tp, self.fp, self.tn, self.fn_);
        [
            percent(tp + tn, self.total()),
            percent(tp, tp + fn_),
            percent(tn, tn + fp),
            percent(2 * tp, 2 * tp + fp + fn_),
        ]
    }
}

/// Confusion counts over `(predicted, truth)` pairs.
pub fn compute_metrics(
    kind: ComplicationKind,
    outcomes: impl IntoIterator<Item = (bool, bool)>,
) -> Result<MetricsReport, DecisionError> {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (pred, truth) in outcomes {
        match (pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    if tp + fp + tn + fn_ == 0 {
        return Err(DecisionError::EmptyInput);
    }
    Ok(MetricsReport::from_counts(kind, tp, fp, tn, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
}

/// Unweighted mean over complications of the unrounded rates, then rounded.
pub fn average_metrics(reports: &[MetricsReport]) -> Option<AverageRow> {
    if reports.is_empty() {
        return None;
    }
    let mut sum = [0.0; 4];
    for r in reports {
        for (s, v) in sum.iter_mut().zip(r.exact()) {
            *s += v;
        }
    }
    let n = reports.len() as f64;
    let [accuracy, sensitivity, specificity, f1] = sum.map(|s| round2(s / n));
    Some(AverageRow {
        accuracy,
        sensitivity,
        specificity,
        f1,
    })
}

/// A count with how many of those videos truly have the complication.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelCell {
    pub count: usize,
    pub positives: usize,
}

impl std::fmt::Display for FunnelCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.count, self.positives)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelRow {
    pub kind: ComplicationKind,
    /// Videos evaluated for this complication (scoped-out videos excluded).
    pub total: FunnelCell,
    /// Videos with at least one flagged segment.
    pub after_scoring: FunnelCell,
    /// Videos labelled positive.
    pub after_vlm: FunnelCell,
}

/// Stage-wise survivor counts over `(decision, truth)` records of one kind.
pub fn funnel_counts<'a>(
    kind: ComplicationKind,
    records: impl IntoIterator<Item = (&'a VideoDecision, bool)>,
) -> FunnelRow {
    let mut row = FunnelRow {
        kind,
        total: FunnelCell::default(),
        after_scoring: FunnelCell::default(),
        after_vlm: FunnelCell::default(),
    };
    let bump = |cell: &mut FunnelCell, truth: bool| {
        cell.count += 1;
        cell.positives += truth as usize;
    };
    for (d, truth) in records.into_iter().filter(|(d, _)| d.kind == kind) {
        if d.stage == Stage::ScopedOut {
            continue;
        }
        bump(&mut row.total, truth);
        if d.stage == Stage::Adjudicated {
            bump(&mut row.after_scoring, truth);
        }
        if d.label {
            bump(&mut row.after_vlm, truth);
        }
    }
    row
}

/// Ground truth for one video.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoLabels {
    pub iris_prolapse: bool,
    pub pcr: bool,
    pub vitreous_loss: bool,
}

impl VideoLabels {
    pub fn get(&self, kind: ComplicationKind) -> bool {
        match kind {
            ComplicationKind::IrisProlapse => self.iris_prolapse,
            ComplicationKind::Pcr => self.pcr,
            ComplicationKind::VitreousLoss => self.vitreous_loss,
        }
    }

    pub fn set(&mut self, kind: ComplicationKind, value: bool) {
        match kind {
            ComplicationKind::IrisProlapse => self.iris_prolapse = value,
            ComplicationKind::Pcr => self.pcr = value,
            ComplicationKind::VitreousLoss => self.vitreous_loss = value,
        }
    }
}

pub type LabelsFile = BTreeMap<String, VideoLabels>;

pub fn load_labels(path: &Path) -> Result<LabelsFile, DecisionError> {
    let err = |message: String| DecisionError::Labels {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEvaluation {
    pub video_id: String,
    pub truth: VideoLabels,
    pub decisions: Vec<VideoDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Vec<MetricsReport>,
    pub average: Option<AverageRow>,
    pub funnel: Vec<FunnelRow>,
    pub videos: Vec<VideoEvaluation>,
}

/// Joins per-video decisions with the labels file. Scoped-out videos are
/// excluded from a complication's metrics and funnel.
pub fn evaluate(
    videos: Vec<(String, Vec<VideoDecision>)>,
    labels: &LabelsFile,
) -> Result<EvalReport, DecisionError> {
    if videos.is_empty() {
        return Err(DecisionError::EmptyInput);
    }
    let mut evaluated = Vec::with_capacity(videos.len());
    for (video_id, decisions) in videos {
        let truth = *labels
            .get(&video_id)
            .ok_or_else(|| DecisionError::LabelMissing(video_id.clone()))?;
        evaluated.push(VideoEvaluation {
            video_id,
            truth,
            decisions,
        });
    }
    let records = |kind: ComplicationKind| {
        evaluated
            .iter()
            .flat_map(move |v| v.decisions.iter().map(move |d| (d, v.truth.get(kind))))
            .filter(move |(d, _)| d.kind == kind)
    };
    let mut metrics = Vec::new();
    let mut funnel = Vec::new();
    for kind in ComplicationKind::ALL {
        let outcomes = records(kind)
            .filter(|(d, _)| d.stage != Stage::ScopedOut)
            .map(|(d, t)| (d.label, t));
        match compute_metrics(kind, outcomes) {
            Ok(m) => metrics.push(m),
            Err(DecisionError::EmptyInput) => {}
            Err(e) => return Err(e),
        }
        funnel.push(funnel_counts(kind, records(kind)));
    }
    Ok(EvalReport {
        average: average_metrics(&metrics),
        metrics,
        funnel,
        videos: evaluated,
    })
}

/// Plain-text tables: metrics with an average row, then the stage funnel.
pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>9} {:>12} {:>12} {:>9}",
        "Complication", "Accuracy", "Sensitivity", "Specificity", "F1 Score"
    );
    for m in &report.metrics {
        let _ = writeln!(
            out,
            "{:<16} {:>9.2} {:>12.2} {:>12.2} {:>9.2}",
            m.kind.title(),
            m.accuracy,
            m.sensitivity,
            m.specificity,
            m.f1
        );
    }
    if let Some(a) = report.average {
        let _ = writeln!(
            out,
            "{:<16} {:>9.2} {:>12.2} {:>12.2} {:>9.2}",
            "Average", a.accuracy, a.sensitivity, a.specificity, a.f1
        );
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<16}  {:>12}  {:>18}  {:>20}",
        "Complication", "Total Videos", "After Risk Scoring", "After VLM Classifier"
    );
    for row in &report.funnel {
        let _ = writeln!(
            out,
            "{:<16}  {:>12}  {:>18}  {:>20}",
            row.kind.title(),
            row.total.to_string(),
            row.after_scoring.to_string(),
            row.after_vlm.to_string()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjudicator::SegmentRef;

    pub(crate) fn verdict(kind: ComplicationKind, label: Label, confidence: Confidence, index: usize) -> SegmentVerdict {
        SegmentVerdict {
            kind,
            segment: SegmentRef {
                video_id: "v".into(),
                index,
                start_frame: index * 20,
                end_frame: index * 20 + 10,
                representative_frame: index * 20,
            },
            label,
            confidence,
            reasons: Vec::new(),
            observations: BTreeMap::new(),
            notes: None,
            model: String::new(),
            raw_response: String::new(),
        }
    }

    fn decide(kind: ComplicationKind, atoms: &[(Label, Confidence)]) -> bool {
        let vs: Vec<_> = atoms
            .iter()
            .enumerate()
            .map(|(i, &(l, c))| verdict(kind, l, c, i))
            .collect();
        aggregate_video("v", kind, &vs).unwrap().label
    }

    use Confidence::*;
    use Label::*;

    #[test]
    fn aggregation_examples() {
        assert!(decide(ComplicationKind::IrisProlapse, &[(No, High), (Yes, Low), (No, High)]));
        assert!(decide(ComplicationKind::Pcr, &[(No, High), (Unsure, Low)]));
        let vl = ComplicationKind::VitreousLoss;
        assert!(decide(vl, &[(Yes, Medium), (No, High), (Yes, Medium)]));
        assert!(!decide(vl, &[(Yes, Medium)]));
        assert!(decide(vl, &[(Yes, High)]));
        assert!(!decide(vl, &[(Yes, Low), (Yes, Low), (Unsure, High)]));
    }

    #[test]
    fn empty_is_no_segments() {
        let d = aggregate_video("v", ComplicationKind::Pcr, &[]).unwrap();
        assert_eq!((d.label, d.stage), (false, Stage::NoSegments));
    }

    #[test]
    fn mixed_kinds_rejected() {
        let vs = [verdict(ComplicationKind::Pcr, Yes, High, 0)];
        assert_eq!(
            aggregate_video("v", ComplicationKind::IrisProlapse, &vs),
            Err(DecisionError::MixedKinds {
                expected: ComplicationKind::IrisProlapse,
                found: ComplicationKind::Pcr
            })
        );
    }

    #[test]
    fn table_rows() {
        let m = MetricsReport::from_counts(ComplicationKind::IrisProlapse, 9, 2, 40, 2);
        assert_eq!([m.accuracy, m.sensitivity, m.specificity, m.f1], [92.45, 81.82, 95.24, 81.82]);
        let m = MetricsReport::from_counts(ComplicationKind::Pcr, 7, 4, 35, 5);
        assert_eq!([m.accuracy, m.sensitivity, m.specificity, m.f1], [82.35, 58.33, 89.74, 60.87]);
        let m = MetricsReport::from_counts(ComplicationKind::VitreousLoss, 9, 5, 34, 3);
        assert_eq!([m.accuracy, m.sensitivity, m.specificity, m.f1], [84.31, 75.0, 87.18, 69.23]);
    }

    #[test]
    fn zero_denominators() {
        let m = MetricsReport::from_counts(ComplicationKind::Pcr, 0, 0, 5, 0);
        assert_eq!([m.accuracy, m.sensitivity, m.specificity, m.f1], [100.0, 0.0, 100.0, 0.0]);
        assert_eq!(
            compute_metrics(ComplicationKind::Pcr, std::iter::empty()),
            Err(DecisionError::EmptyInput)
        );
    }

    #[test]
    fn funnel_skips_scoped_out() {
        let mut ds = vec![VideoDecision::scoped_out("a", ComplicationKind::Pcr)];
        ds.push(aggregate_video("b", ComplicationKind::Pcr, &[]).unwrap());
        ds.push(aggregate_video("c", ComplicationKind::Pcr, &[verdict(ComplicationKind::Pcr, Unsure, Low, 0)]).unwrap());
        let row = funnel_counts(ComplicationKind::Pcr, ds.iter().zip([true, true, false]));
        assert_eq!(row.total, FunnelCell { count: 2, positives: 1 });
        assert_eq!(row.after_scoring, FunnelCell { count: 1, positives: 0 });
        assert_eq!(row.after_vlm, FunnelCell { count: 1, positives: 0 });
    }

    #[test]
    fn label_missing() {
        let videos = vec![("x".to_string(), vec![])];
        assert_eq!(
            evaluate(videos, &LabelsFile::new()),
            Err(DecisionError::LabelMissing("x".into()))
        );
        assert_eq!(evaluate(vec![], &LabelsFile::new()), Err(DecisionError::EmptyInput));
    }
}
