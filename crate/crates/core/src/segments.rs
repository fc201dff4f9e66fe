//! Sliding-window flagging of risk traces into high-risk segments.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ComplicationKind, FrameRange};
use crate::scoring::{FrameRisk, RiskDetail};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace scores do not cover [{}, {}) densely: {reason}", scope.start, scope.end)]
    NotDense { scope: FrameRange, reason: String },
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Per-frame scores for one complication over its scoped range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrace {
    pub kind: ComplicationKind,
    pub scope: FrameRange,
    pub scores: Vec<FrameRisk>,
}

impl RiskTrace {
    pub fn new(
        kind: ComplicationKind,
        scope: FrameRange,
        scores: Vec<FrameRisk>,
    ) -> Result<Self, TraceError> {
        if scores.len() != scope.len() {
            return Err(TraceError::NotDense {
                scope,
                reason: format!("{} scores for {} frames", scores.len(), scope.len()),
            });
        }
        if let Some((i, s)) = scores
            .iter()
            .enumerate()
            .find(|(i, s)| s.frame != scope.start + i)
        {
            return Err(TraceError::NotDense {
                scope,
                reason: format!("position {i} holds frame {}", s.frame),
            });
        }
        if scores.is_empty() {
            return Err(TraceError::Empty);
        }
        Ok(Self { kind, scope, scores })
    }

    /// Trace from bare scores starting at `start`.
    pub fn from_values(kind: ComplicationKind, start: usize, values: &[f64]) -> Result<Self, TraceError> {
        let scores = values
            .iter()
            .enumerate()
            .map(|(i, &score)| FrameRisk {
                frame: start + i,
                score,
                detail: RiskDetail::Imported,
            })
            .collect();
        Self::new(kind, FrameRange::new(start, start + values.len()), scores)
    }

    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.score).collect()
    }

    pub fn max_score(&self) -> f64 {
        self.scores.iter().map(|s| s.score).fold(0.0, f64::max)
    }

    /// Serializes as `frame_index,score` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,score\n");
        for s in &self.scores {
            let _ = writeln!(out, "{},{}", s.frame, s.score);
        }
        out
    }

    pub fn from_csv(kind: ComplicationKind, text: &str) -> Result<Self, TraceError> {
        let mut start = None;
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("frame_index")) {
                continue;
            }
            let csv_err = |message: String| TraceError::Csv { line: i + 1, message };
            let (frame, score) = line
                .split_once(',')
                .ok_or_else(|| csv_err("expected `frame_index,score`".into()))?;
            let frame: usize = frame
                .trim()
                .parse()
                .map_err(|e| csv_err(format!("frame index: {e}")))?;
            let score: f64 = score
                .trim()
                .parse()
                .map_err(|e| csv_err(format!("score: {e}")))?;
            let expected = *start.get_or_insert(frame) + values.len();
            if frame != expected {
                return Err(csv_err(format!("expected frame {expected}, found {frame}")));
            }
            values.push(score);
        }
        Self::from_values(kind, start.unwrap_or(0), &values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub start_frame: usize,
    /// Number of frames averaged (the window length, or the trace length if shorter).
    pub len: usize,
    pub mean: f64,
}

/// A contiguous flagged interval of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighRiskSegment {
    pub kind: ComplicationKind,
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
    pub peak_score: f64,
    pub mean_score: f64,
    pub representative_frame: usize,
    /// Frames contributing to `mean_score`. Equals the span length unless
    /// merging bridged a gap.
    pub support: usize,
}

impl HighRiskSegment {
    pub fn range(&self) -> FrameRange {
        FrameRange::new(self.start_frame, self.end_frame)
    }

    fn from_frames(kind: ComplicationKind, trace: &RiskTrace, range: FrameRange) -> Self {
        let offset = trace.scope.start;
        let slice = &trace.scores[range.start - offset..range.end - offset];
        let (mut peak, mut rep) = (f64::NEG_INFINITY, range.start);
        let mut sum = 0.0;
        for s in slice {
            sum += s.score;
            if s.score > peak {
                peak = s.score;
                rep = s.frame;
            }
        }
        Self {
            kind,
            start_frame: range.start,
            end_frame: range.end,
            peak_score: peak,
            mean_score: sum / slice.len() as f64,
            representative_frame: rep,
            support: slice.len(),
        }
    }
}

/// Mean score for every window start in `[scope.start, scope.end - window]`.
/// A trace shorter than the window yields one window over the whole trace.
pub fn window_scores(trace: &RiskTrace, window: usize) -> Vec<WindowScore> {
    assert!(window >= 1, "window must be at least 1");
    let values = trace.values();
    if values.len() <= window {
        return vec![WindowScore {
            start_frame: trace.scope.start,
            len: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
        }];
    }
    values
        .windows(window)
        .enumerate()
        .map(|(i, w)| WindowScore {
            start_frame: trace.scope.start + i,
            len: window,
            mean: w.iter().sum::<f64>() / window as f64,
        })
        .collect()
}

/// Flags windows whose mean reaches `threshold`. Each segment is the union of
/// frames covered by a maximal chain of overlapping flagged windows, so the
/// output is sorted and disjoint.
pub fn flag_segments(trace: &RiskTrace, window: usize, threshold: f64) -> Vec<HighRiskSegment> {
    let mut spans: Vec<FrameRange> = Vec::new();
    for w in window_scores(trace, window) {
        if w.mean < threshold {
            continue;
        }
        let covered = FrameRange::new(w.start_frame, w.start_frame + w.len);
        match spans.last_mut() {
            Some(last) if covered.start < last.end => last.end = last.end.max(covered.end),
            _ => spans.push(covered),
        }
    }
    spans
        .into_iter()
        .map(|r| HighRiskSegment::from_frames(trace.kind, trace, r))
        .collect()
}

fn fuse(a: HighRiskSegment, b: HighRiskSegment) -> HighRiskSegment {
    let (peak_score, representative_frame) = if b.peak_score > a.peak_score {
        (b.peak_score, b.representative_frame)
    } else {
        (a.peak_score, a.representative_frame)
    };
    let support = a.support + b.support;
    HighRiskSegment {
        kind: a.kind,
        start_frame: a.start_frame,
        end_frame: a.end_frame.max(b.end_frame),
        peak_score,
        mean_score: (a.mean_score * a.support as f64 + b.mean_score * b.support as f64)
            / support as f64,
        representative_frame,
        support,
    }
}

/// Fuses consecutive segments separated by at most `gap` frames. Statistics
/// of a fused segment are taken over the member segments' frames only.
pub fn merge_segments(segments: Vec<HighRiskSegment>, gap: usize) -> Vec<HighRiskSegment> {
    let mut out: Vec<HighRiskSegment> = Vec::with_capacity(segments.len());
    for seg in segments {
        match out.last() {
            Some(last) if seg.start_frame.saturating_sub(last.end_frame) <= gap => {
                let last = out.pop().expect("checked above");
                out.push(fuse(last, seg));
            }
            _ => out.push(seg),
        }
    }
    out
}

/// Up to `k` segments with the highest peaks (earlier start wins ties),
/// returned in start order.
pub fn select_top_k(segments: &[HighRiskSegment], k: usize) -> Vec<HighRiskSegment> {
    let mut ranked: Vec<&HighRiskSegment> = segments.iter().collect();
    ranked.sort_by(|a, b| {
        b.peak_score
            .total_cmp(&a.peak_score)
            .then(a.start_frame.cmp(&b.start_frame))
    });
    let mut chosen: Vec<HighRiskSegment> = ranked.into_iter().take(k).cloned().collect();
    chosen.sort_by_key(|s| s.start_frame);
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const K: ComplicationKind = ComplicationKind::IrisProlapse;

    fn trace(values: &[f64]) -> RiskTrace {
        RiskTrace::from_values(K, 0, values).unwrap()
    }

    fn seg(start: usize, end: usize, peak: f64) -> HighRiskSegment {
        HighRiskSegment {
            kind: K,
            start_frame: start,
            end_frame: end,
            peak_score: peak,
            mean_score: peak / 2.0,
            representative_frame: start,
            support: end - start,
        }
    }

    #[test]
    fn all_zero_trace_windows() {
        let w = window_scores(&trace(&[0.0; 50]), 10);
        assert_eq!(w.len(), 41);
        assert!(w.iter().all(|w| w.mean == 0.0));
    }

    #[test]
    fn ten_ones_give_one_full_window() {
        let mut v = vec![0.0; 40];
        v[15..25].iter_mut().for_each(|x| *x = 1.0);
        let w = window_scores(&trace(&v), 10);
        let full: Vec<_> = w.iter().filter(|w| w.mean == 1.0).collect();
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].start_frame, 15);
    }

    #[test]
    fn short_trace_single_window() {
        let w = window_scores(&trace(&[1.0, 2.0, 3.0, 6.0]), 10);
        assert_eq!(w, vec![WindowScore { start_frame: 0, len: 4, mean: 3.0 }]);
    }

    #[test]
    fn window_starts_follow_scope() {
        let t = RiskTrace::from_values(K, 100, &[0.0; 12]).unwrap();
        let w = window_scores(&t, 10);
        assert_eq!(w.iter().map(|w| w.start_frame).collect::<Vec<_>>(), vec![100, 101, 102]);
    }

    #[test]
    fn nothing_flagged() {
        assert!(flag_segments(&trace(&[0.1; 30]), 10, 1.0).is_empty());
    }

    #[test]
    fn single_flagged_window() {
        let mut v = vec![0.0; 50];
        v[20..30].iter_mut().for_each(|x| *x = 1.0);
        let segs = flag_segments(&trace(&v), 10, 1.0);
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start_frame, segs[0].end_frame), (20, 30));
        assert_eq!(segs[0].representative_frame, 20);
        assert_eq!(segs[0].peak_score, 1.0);
    }

    #[test]
    fn overlapping_windows_form_one_segment() {
        let mut v = vec![0.0; 50];
        v[20..31].iter_mut().for_each(|x| *x = 1.0);
        let t = trace(&v);
        let flagged: Vec<usize> = window_scores(&t, 10)
            .iter()
            .filter(|w| w.mean >= 1.0)
            .map(|w| w.start_frame)
            .collect();
        assert_eq!(flagged, vec![20, 21]);
        let segs = flag_segments(&t, 10, 1.0);
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start_frame, segs[0].end_frame), (20, 31));
        assert_eq!(segs[0].representative_frame, 20);
        assert_eq!(segs[0].mean_score, 1.0);
    }

    #[test]
    fn representative_is_the_peak_frame() {
        let mut v = vec![0.0; 50];
        v[20..31].iter_mut().for_each(|x| *x = 1.0);
        v[25] = 3.0;
        let segs = flag_segments(&trace(&v), 10, 1.0);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].representative_frame, 25);
        assert_eq!(segs[0].peak_score, 3.0);
    }

    #[test]
    fn merge_close_segments() {
        let merged = merge_segments(vec![seg(10, 20, 1.0), seg(22, 30, 2.0)], 5);
        assert_eq!(merged.len(), 1);
        assert_eq!((merged[0].start_frame, merged[0].end_frame), (10, 30));
        assert_eq!(merged[0].peak_score, 2.0);
        assert_eq!(merged[0].representative_frame, 22);
        assert_eq!(merged[0].support, 18);
        // mean over the two segments' frames only: (10*0.5 + 8*1.0) / 18
        assert!((merged[0].mean_score - 13.0 / 18.0).abs() < 1e-12);
    }

    #[test]
    fn distant_segments_stay_apart() {
        let input = vec![seg(10, 20, 1.0), seg(40, 50, 1.0)];
        assert_eq!(merge_segments(input.clone(), 5), input);
        assert!(merge_segments(vec![], 5).is_empty());
    }

    #[test]
    fn top_k_examples() {
        let three = vec![seg(0, 5, 1.0), seg(10, 15, 3.0), seg(20, 25, 2.0)];
        assert_eq!(select_top_k(&three, 5), three);

        let seven: Vec<_> = (0..7)
            .map(|i| seg(i * 10, i * 10 + 5, [5.0, 9.0, 3.0, 8.0, 7.0, 4.0, 6.0][i]))
            .collect();
        let top = select_top_k(&seven, 5);
        let mut peaks: Vec<f64> = top.iter().map(|s| s.peak_score).collect();
        assert!(top.windows(2).all(|w| w[0].start_frame < w[1].start_frame));
        peaks.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(peaks, vec![9.0, 8.0, 7.0, 6.0, 5.0]);

        let tie = vec![seg(0, 5, 2.0), seg(10, 15, 2.0)];
        assert_eq!(select_top_k(&tie, 1), vec![seg(0, 5, 2.0)]);
    }

    #[test]
    fn csv_round_trip() {
        let t = RiskTrace::from_values(ComplicationKind::Pcr, 7, &[0.0, 0.125, 1.0 / 3.0]).unwrap();
        let back = RiskTrace::from_csv(ComplicationKind::Pcr, &t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert!(RiskTrace::from_csv(ComplicationKind::Pcr, "frame_index,score\n3,1\n5,1\n").is_err());
    }

    #[test]
    fn trace_must_be_dense() {
        let scores = vec![FrameRisk::zero(0, RiskDetail::NoEvidence), FrameRisk::zero(2, RiskDetail::NoEvidence)];
        assert!(RiskTrace::new(K, FrameRange::new(0, 2), scores).is_err());
    }

    proptest! {
        #[test]
        fn flagged_segments_are_sorted_disjoint_and_in_scope(
            values in prop::collection::vec(0.0f64..3.0, 1..120),
            start in 0usize..50,
            window in 1usize..15,
            tau in 0.1f64..2.5,
        ) {
            let t = RiskTrace::from_values(K, start, &values).unwrap();
            let segs = flag_segments(&t, window, tau);
            for s in &segs {
                prop_assert!(t.scope.contains_range(&s.range()));
                prop_assert!(s.start_frame < s.end_frame);
                prop_assert!(s.range().contains(s.representative_frame));
                prop_assert!(s.peak_score >= s.mean_score);
            }
            for pair in segs.windows(2) {
                prop_assert!(pair[0].end_frame <= pair[1].start_frame);
                prop_assert!(pair[0].start_frame < pair[1].start_frame);
            }
        }
    }
}
