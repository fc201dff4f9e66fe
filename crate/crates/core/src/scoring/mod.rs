//! Per-frame risk scores, one scorer per complication.
//!
//! Every scorer maps a single frame to a non-negative [`FrameRisk`]. A score
//! of zero means the scorer found nothing to measure (no candidate, no edge
//! chain, missing or occluded mask).

mod iris;
mod pcr;
mod vitreous;

pub use iris::{
    filter_candidates, iris_periphery_band, propose_candidates, score_iris_prolapse,
    score_iris_prolapse_with, CandidateMask, CandidateProvider, ColorRegionProvider,
};
pub use pcr::{
    detect_edge_chains, equalize_within, interior_region, luminance, score_pcr, sobel_magnitude,
    MAX_SOBEL_MAGNITUDE,
};
pub use vitreous::score_vitreous;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::model::ComplicationKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("frame pixels are required for this scorer but the bundle has none")]
    FramesUnavailable,
}

/// Scorer-specific evidence behind a frame score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RiskDetail {
    /// The structure's mask was empty on this frame.
    MaskMissing,
    /// Nothing qualified; the score is zero.
    NoEvidence,
    IrisCandidate {
        area: usize,
        bbox: BoundingBox,
        mean_color: [f64; 3],
        /// Candidates proposed before filtering.
        proposed: usize,
        /// Candidates that survived the size and colour gates.
        surviving: usize,
    },
    PcrEdge {
        diagonal: f64,
        chain_pixels: usize,
        bbox: BoundingBox,
        pupil_area: usize,
        chains: usize,
    },
    VitreousSector {
        sector: usize,
        sector_radius: f64,
        mean_radius: f64,
        present_sectors: usize,
    },
    /// Too few sectors had boundary samples (e.g. an instrument over the pupil).
    Occluded { present_sectors: usize },
    /// Score read back from an exported trace; the evidence was not kept.
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRisk {
    pub frame: usize,
    pub score: f64,
    pub detail: RiskDetail,
}

impl FrameRisk {
    pub fn zero(frame: usize, detail: RiskDetail) -> Self {
        Self {
            frame,
            score: 0.0,
            detail,
        }
    }
}

/// HSV window that a pixel colour must fall inside. Hue is in degrees; a
/// window with `hue_min > hue_max` wraps through 0°.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorGate {
    pub hue_min: f64,
    pub hue_max: f64,
    pub saturation_min: f64,
    pub value_min: f64,
    pub value_max: f64,
}

impl Default for ColorGate {
    fn default() -> Self {
        Self {
            hue_min: 5.0,
            hue_max: 35.0,
            saturation_min: 0.25,
            value_min: 0.15,
            value_max: 0.85,
        }
    }
}

impl ColorGate {
    pub fn hue_in_window(&self, hue: f64) -> bool {
        if self.hue_min <= self.hue_max {
            (self.hue_min..=self.hue_max).contains(&hue)
        } else {
            hue >= self.hue_min || hue <= self.hue_max
        }
    }

    pub fn contains(&self, rgb: [f64; 3]) -> bool {
        let (h, s, v) = rgb_to_hsv(rgb);
        self.hue_in_window(h)
            && s >= self.saturation_min
            && (self.value_min..=self.value_max).contains(&v)
    }
}

/// RGB in `[0, 255]` to (hue degrees in `[0, 360)`, saturation, value).
/// Grey pixels get hue 0 and saturation 0.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|c| c / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let saturation = if max == 0.0 { 0.0 } else { delta / max };
    (hue, saturation, max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrisConfig {
    /// Width of the periphery band as a fraction of the iris equivalent radius.
    pub band_fraction: f64,
    pub min_area: usize,
    /// Upper candidate area as a fraction of the frame area.
    pub max_area_fraction: f64,
    /// Candidates whose mean HSV value exceeds this are specular highlights.
    pub specular_value: f64,
    pub gate: ColorGate,
    /// Window-mean threshold for flagging, in pixels.
    pub threshold: f64,
}

impl Default for IrisConfig {
    fn default() -> Self {
        Self {
            band_fraction: 0.15,
            min_area: 50,
            max_area_fraction: 0.05,
            specular_value: 0.9,
            gate: ColorGate::default(),
            threshold: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcrConfig {
    /// Strong-edge threshold as a fraction of [`MAX_SOBEL_MAGNITUDE`].
    pub high_threshold: f64,
    /// Weak-edge threshold relative to the strong one.
    pub low_ratio: f64,
    pub min_edge_pixels: usize,
    /// Pixels closer than this to the pupil boundary are not searched for edges.
    pub boundary_margin: f64,
    pub threshold: f64,
}

impl Default for PcrConfig {
    fn default() -> Self {
        Self {
            high_threshold: 0.25,
            low_ratio: 0.4,
            min_edge_pixels: 15,
            boundary_margin: 2.0,
            threshold: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitreousConfig {
    pub sectors: usize,
    pub min_present_sectors: usize,
    pub threshold: f64,
}

impl Default for VitreousConfig {
    fn default() -> Self {
        Self {
            sectors: 12,
            min_present_sectors: 6,
            threshold: 1.12,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub iris: IrisConfig,
    pub pcr: PcrConfig,
    pub vitreous: VitreousConfig,
}

impl ScoringConfig {
    /// Flagging threshold for a complication's window means.
    pub fn threshold(&self, kind: ComplicationKind) -> f64 {
        match kind {
            ComplicationKind::IrisProlapse => self.iris.threshold,
            ComplicationKind::Pcr => self.pcr.threshold,
            ComplicationKind::VitreousLoss => self.vitreous.threshold,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_of_phantom_colours() {
        let (h, s, v) = rgb_to_hsv([105.0, 70.0, 45.0]);
        assert!((h - 25.0).abs() < 1e-9);
        assert!((s - 60.0 / 105.0).abs() < 1e-9);
        assert!((v - 105.0 / 255.0).abs() < 1e-9);
        let gate = ColorGate::default();
        assert!(gate.contains([105.0, 70.0, 45.0]));
        assert!(!gate.contains([230.0, 225.0, 220.0]));
        assert!(!gate.contains([25.0, 20.0, 20.0]));
        assert!(!gate.contains([200.0, 200.0, 210.0]));
    }

    #[test]
    fn wrapping_hue_window() {
        let gate = ColorGate {
            hue_min: 340.0,
            hue_max: 20.0,
            ..ColorGate::default()
        };
        assert!(gate.hue_in_window(350.0));
        assert!(gate.hue_in_window(10.0));
        assert!(!gate.hue_in_window(180.0));
    }
}
