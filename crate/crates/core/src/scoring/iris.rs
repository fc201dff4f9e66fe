//! Iris prolapse: iris-coloured regions appearing just outside the iris.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{ColorGate, FrameRisk, IrisConfig, RiskDetail};
use crate::geometry::{
    bounding_box, centroid_area, connected_components, squared_distance_transform, BinaryMask,
    BoundingBox, Connectivity, GeometryError,
};

/// A connected region proposed as possible protruding iris tissue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateMask {
    pub pixels: Vec<(u32, u32)>,
    pub area: usize,
    pub bbox: BoundingBox,
    /// Mean frame colour under the region.
    pub mean_color: [f64; 3],
}

impl CandidateMask {
    pub fn from_pixels(frame: &RgbImage, pixels: Vec<(u32, u32)>) -> Option<Self> {
        let bbox = bounding_box(&pixels).ok()?;
        let mut sum = [0f64; 3];
        for &(x, y) in &pixels {
            let p = frame.get_pixel(x, y).0;
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
        }
        let area = pixels.len();
        Some(Self {
            mean_color: sum.map(|s| s / area as f64),
            area,
            bbox,
            pixels,
        })
    }
}

/// Source of candidate regions inside the periphery band.
pub trait CandidateProvider: Send + Sync {
    fn propose(&self, frame: &RgbImage, band: &BinaryMask) -> Vec<CandidateMask>;
}

/// Default provider: 8-connected components of band pixels whose colour
/// passes the gate.
#[derive(Debug, Clone, Default)]
pub struct ColorRegionProvider {
    pub gate: ColorGate,
}

impl CandidateProvider for ColorRegionProvider {
    fn propose(&self, frame: &RgbImage, band: &BinaryMask) -> Vec<CandidateMask> {
        propose_candidates(frame, band, &self.gate)
    }
}

/// Ring of non-iris pixels within `band_fraction * R_eq` of the iris, where
/// `R_eq = sqrt(area / pi)`.
pub fn iris_periphery_band(iris: &BinaryMask, band_fraction: f64) -> Result<BinaryMask, GeometryError> {
    let area = centroid_area(iris).area;
    if area == 0 {
        return Err(GeometryError::EmptyMask);
    }
    let reach = band_fraction * (area as f64 / std::f64::consts::PI).sqrt();
    let reach_sq = reach * reach;
    let dist = squared_distance_transform(iris);
    let w = iris.width() as usize;
    Ok(BinaryMask::from_fn(iris.width(), iris.height(), |x, y| {
        let d = dist[y as usize * w + x as usize];
        d > 0.0 && d <= reach_sq
    }))
}

pub fn propose_candidates(frame: &RgbImage, band: &BinaryMask, gate: &ColorGate) -> Vec<CandidateMask> {
    let tissue = BinaryMask::from_fn(band.width(), band.height(), |x, y| {
        band.get(x, y) && gate.contains(frame.get_pixel(x, y).0.map(f64::from))
    });
    connected_components(&tissue, Connectivity::Eight)
        .into_iter()
        .filter_map(|pixels| CandidateMask::from_pixels(frame, pixels))
        .collect()
}

/// Drops instrument-sized, specular and off-colour regions. Order is kept.
pub fn filter_candidates(
    candidates: Vec<CandidateMask>,
    config: &IrisConfig,
    frame_area: usize,
) -> Vec<CandidateMask> {
    let max_area = config.max_area_fraction * frame_area as f64;
    candidates
        .into_iter()
        .filter(|c| {
            let (hue, saturation, value) = super::rgb_to_hsv(c.mean_color);
            c.area >= config.min_area
                && (c.area as f64) <= max_area
                && value <= config.specular_value
                && saturation >= config.gate.saturation_min
                && config.gate.hue_in_window(hue)
        })
        .collect()
}

pub fn score_iris_prolapse(
    frame_index: usize,
    frame: &RgbImage,
    iris: &BinaryMask,
    config: &IrisConfig,
) -> FrameRisk {
    let provider = ColorRegionProvider { gate: config.gate };
    score_iris_prolapse_with(&provider, frame_index, frame, iris, config)
}

/// Score is the area of the largest candidate surviving the filters.
pub fn score_iris_prolapse_with(
    provider: &dyn CandidateProvider,
    frame_index: usize,
    frame: &RgbImage,
    iris: &BinaryMask,
    config: &IrisConfig,
) -> FrameRisk {
    let Ok(band) = iris_periphery_band(iris, config.band_fraction) else {
        return FrameRisk::zero(frame_index, RiskDetail::MaskMissing);
    };
    let proposed = provider.propose(frame, &band);
    let n_proposed = proposed.len();
    let frame_area = frame.width() as usize * frame.height() as usize;
    let surviving = filter_candidates(proposed, config, frame_area);
    let n_surviving = surviving.len();
    // earliest candidate wins ties
    let best = surviving
        .into_iter()
        .fold(None::<CandidateMask>, |best, c| match best {
            Some(b) if b.area >= c.area => Some(b),
            _ => Some(c),
        });
    match best {
        Some(c) => FrameRisk {
            frame: frame_index,
            score: c.area as f64,
            detail: RiskDetail::IrisCandidate {
                area: c.area,
                bbox: c.bbox,
                mean_color: c.mean_color,
                proposed: n_proposed,
                surviving: n_surviving,
            },
        },
        None => FrameRisk::zero(frame_index, RiskDetail::NoEvidence),
    }
}
