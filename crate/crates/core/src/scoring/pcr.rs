//! Posterior capsule rupture: long straight edges inside the pupil.
//!
//! Luminance is histogram-equalized over pupil pixels only, a 3×3 Sobel
//! gradient is taken away from the pupil rim, and double-threshold hysteresis
//! keeps weak edge pixels that are 8-connected to strong ones. Each surviving
//! 8-connected chain is measured by its bounding-box diagonal.

use std::collections::VecDeque;

use image::RgbImage;

use super::{FrameRisk, PcrConfig, RiskDetail, ScoreError};
use crate::geometry::{
    bounding_box, connected_components, squared_distance_transform, BinaryMask, Connectivity,
};

/// Largest possible 3×3 Sobel magnitude on 8-bit input.
pub const MAX_SOBEL_MAGNITUDE: f64 = 4.0 * 255.0 * std::f64::consts::SQRT_2;

/// Rec. 601 luma, rounded to 8 bits. Row-major.
pub fn luminance(frame: &RgbImage) -> Vec<u8> {
    frame
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0.map(f64::from);
            (0.299 * r + 0.587 * g + 0.114 * b).round().clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// Histogram equalization computed from, and applied to, pixels under `mask`.
/// Pixels outside the mask are set to 0.
pub fn equalize_within(values: &[u8], mask: &BinaryMask) -> Vec<u8> {
    let mut hist = [0usize; 256];
    for (v, &inside) in values.iter().zip(mask.as_slice()) {
        if inside {
            hist[*v as usize] += 1;
        }
    }
    let total: usize = hist.iter().sum();
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (i, h) in hist.iter().enumerate() {
        acc += h;
        cdf[i] = acc;
    }
    let cdf_min = hist
        .iter()
        .position(|&h| h > 0)
        .map(|i| cdf[i])
        .unwrap_or(0);
    let span = total - cdf_min;
    let lut: Vec<u8> = (0..256)
        .map(|i| {
            if span == 0 {
                0
            } else {
                let num = cdf[i].saturating_sub(cdf_min) as f64 * 255.0;
                (num / span as f64).round() as u8
            }
        })
        .collect();
    values
        .iter()
        .zip(mask.as_slice())
        .map(|(v, &inside)| if inside { lut[*v as usize] } else { 0 })
        .collect()
}

/// Pupil pixels farther than `margin` from any non-pupil pixel and off the
/// image border, so the full 3×3 neighbourhood lies inside the pupil.
pub fn interior_region(pupil: &BinaryMask, margin: f64) -> BinaryMask {
    let (w, h) = (pupil.width(), pupil.height());
    let outside = BinaryMask::from_fn(w, h, |x, y| !pupil.get(x, y));
    let dist = squared_distance_transform(&outside);
    let margin = margin.max(std::f64::consts::SQRT_2);
    let margin_sq = margin * margin;
    BinaryMask::from_fn(w, h, |x, y| {
        pupil.get(x, y)
            && x > 0
            && y > 0
            && x + 1 < w
            && y + 1 < h
            && dist[y as usize * w as usize + x as usize] > margin_sq
    })
}

/// 3×3 Sobel gradient magnitude, evaluated only on `region` (zero elsewhere).
/// `region` must not touch the image border.
pub fn sobel_magnitude(values: &[u8], region: &BinaryMask) -> Vec<f64> {
    let w = region.width() as usize;
    let at = |x: usize, y: usize| values[y * w + x] as f64;
    let mut out = vec![0f64; values.len()];
    for (x, y) in region.iter_set() {
        let (x, y) = (x as usize, y as usize);
        let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
        let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        out[y * w + x] = gx.hypot(gy);
    }
    out
}

/// Keeps pixels with magnitude `>= high`, plus pixels `>= low` 8-connected to them.
fn hysteresis(magnitude: &[f64], width: u32, height: u32, low: f64, high: f64) -> BinaryMask {
    let w = width as usize;
    let mut edges = BinaryMask::new(width, height);
    let mut queue = VecDeque::new();
    for (i, &m) in magnitude.iter().enumerate() {
        if m >= high && m > 0.0 {
            let (x, y) = ((i % w) as u32, (i / w) as u32);
            edges.set(x, y, true);
            queue.push_back((x, y));
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                    continue;
                }
                let (nx, ny) = (nx as u32, ny as u32);
                let m = magnitude[ny as usize * w + nx as usize];
                if m >= low && m > 0.0 && !edges.get(nx, ny) {
                    edges.set(nx, ny, true);
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    edges
}

/// Edge chains (8-connected edge pixel sets) with at least `min_edge_pixels` pixels.
pub fn detect_edge_chains(
    equalized: &[u8],
    region: &BinaryMask,
    config: &PcrConfig,
) -> Vec<Vec<(u32, u32)>> {
    let magnitude = sobel_magnitude(equalized, region);
    let high = config.high_threshold * MAX_SOBEL_MAGNITUDE;
    let low = config.low_ratio * high;
    let edges = hysteresis(&magnitude, region.width(), region.height(), low, high);
    connected_components(&edges, Connectivity::Eight)
        .into_iter()
        .filter(|chain| chain.len() >= config.min_edge_pixels)
        .collect()
}

/// Longest edge-chain bounding-box diagonal divided by `sqrt(pupil area)`.
pub fn score_pcr(
    frame_index: usize,
    frame: Option<&RgbImage>,
    pupil: &BinaryMask,
    config: &PcrConfig,
) -> Result<FrameRisk, ScoreError> {
    let frame = frame.ok_or(ScoreError::FramesUnavailable)?;
    let pupil_area = pupil.count();
    if pupil_area == 0 {
        return Ok(FrameRisk::zero(frame_index, RiskDetail::MaskMissing));
    }
    let equalized = equalize_within(&luminance(frame), pupil);
    let region = interior_region(pupil, config.boundary_margin);
    let chains = detect_edge_chains(&equalized, &region, config);
    let n_chains = chains.len();

    let best = chains
        .into_iter()
        .map(|chain| {
            let bbox = bounding_box(&chain).expect("chains are non-empty");
            (bbox.diagonal(), chain.len(), bbox)
        })
        .fold(None, |best: Option<(f64, usize, _)>, c| match best {
            Some(b) if b.0 >= c.0 => Some(b),
            _ => Some(c),
        });

    Ok(match best {
        Some((diagonal, chain_pixels, bbox)) if diagonal > 0.0 => FrameRisk {
            frame: frame_index,
            score: diagonal / (pupil_area as f64).sqrt(),
            detail: RiskDetail::PcrEdge {
                diagonal,
                chain_pixels,
                bbox,
                pupil_area,
                chains: n_chains,
            },
        },
        _ => FrameRisk::zero(frame_index, RiskDetail::NoEvidence),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    const PUPIL: Rgb<u8> = Rgb([25, 20, 20]);
    const LINE: Rgb<u8> = Rgb([200, 200, 210]);

    fn pupil_scene(w: u32, h: u32, r: f64) -> (RgbImage, BinaryMask) {
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let mask = BinaryMask::from_fn(w, h, |x, y| (x as f64 - cx).hypot(y as f64 - cy) <= r);
        let frame = RgbImage::from_fn(w, h, |x, y| {
            if mask.get(x, y) {
                PUPIL
            } else {
                Rgb([105, 70, 45])
            }
        });
        (frame, mask)
    }

    /// Paints every pixel within `half_width` of the segment.
    fn draw_segment(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), half_width: f64) {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len_sq = dx * dx + dy * dy;
        for y in 0..img.height() {
            for x in 0..img.width() {
                let (px, py) = (x as f64 - a.0, y as f64 - a.1);
                let t = ((px * dx + py * dy) / len_sq).clamp(0.0, 1.0);
                let d = (px - t * dx).hypot(py - t * dy);
                if d <= half_width {
                    img.put_pixel(x, y, LINE);
                }
            }
        }
    }

    /// Independent measurement: farthest pair of bright pixels over sqrt(pupil area).
    fn brute_force_line_score(frame: &RgbImage, pupil: &BinaryMask) -> f64 {
        let bright: Vec<(f64, f64)> = pupil
            .iter_set()
            .filter(|&(x, y)| frame.get_pixel(x, y).0[0] > 150)
            .map(|(x, y)| (x as f64, y as f64))
            .collect();
        let mut longest = 0f64;
        for (i, a) in bright.iter().enumerate() {
            for b in &bright[i + 1..] {
                longest = longest.max((a.0 - b.0).hypot(a.1 - b.1));
            }
        }
        longest / (pupil.count() as f64).sqrt()
    }

    #[test]
    fn uniform_pupil_scores_zero() {
        let (frame, pupil) = pupil_scene(240, 200, 80.0);
        let risk = score_pcr(0, Some(&frame), &pupil, &PcrConfig::default()).unwrap();
        assert_eq!(risk.score, 0.0);
        assert_eq!(risk.detail, RiskDetail::NoEvidence);
    }

    #[test]
    fn straight_line_score_matches_measurement() {
        let (mut frame, pupil) = pupil_scene(240, 200, 80.0);
        draw_segment(&mut frame, (70.0, 100.0), (170.0, 100.0), 1.0);
        let expected = brute_force_line_score(&frame, &pupil);
        let nominal = 100.0 / (std::f64::consts::PI * 80.0 * 80.0).sqrt();
        assert!((expected - nominal).abs() / nominal < 0.05, "{expected} {nominal}");
        let risk = score_pcr(0, Some(&frame), &pupil, &PcrConfig::default()).unwrap();
        assert!(
            (risk.score - expected).abs() / expected <= 0.15,
            "score {} vs {}",
            risk.score,
            expected
        );
        assert!((risk.score - 0.705).abs() / 0.705 <= 0.15);
    }

    #[test]
    fn diagonal_line_is_measured_by_its_box() {
        let (mut frame, pupil) = pupil_scene(240, 200, 80.0);
        draw_segment(&mut frame, (85.0, 65.0), (155.0, 135.0), 1.0);
        let expected = brute_force_line_score(&frame, &pupil);
        let risk = score_pcr(0, Some(&frame), &pupil, &PcrConfig::default()).unwrap();
        assert!((risk.score - expected).abs() / expected <= 0.15);
    }

    #[test]
    fn straight_line_beats_short_arc() {
        let (mut frame, pupil) = pupil_scene(240, 200, 80.0);
        // arc of radius 20 spanning ~97 degrees: chord ~30 px
        for step in 0..200 {
            let t = (-48.5 + step as f64 * 97.0 / 199.0).to_radians();
            let (x, y) = (120.0 + 20.0 * t.sin(), 60.0 + 20.0 * t.cos());
            frame.put_pixel(x.round() as u32, y.round() as u32, LINE);
        }
        let arc_only = score_pcr(0, Some(&frame), &pupil, &PcrConfig::default()).unwrap();
        draw_segment(&mut frame, (70.0, 130.0), (170.0, 130.0), 1.0);
        let both = score_pcr(0, Some(&frame), &pupil, &PcrConfig::default()).unwrap();
        assert!(arc_only.score > 0.0);
        assert!(both.score > arc_only.score);
        match both.detail {
            RiskDetail::PcrEdge { diagonal, chains, .. } => {
                assert!(diagonal > 95.0, "{diagonal}");
                assert!(chains >= 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn brightness_shift_leaves_score_unchanged() {
        let (mut frame, pupil) = pupil_scene(240, 200, 80.0);
        draw_segment(&mut frame, (80.0, 90.0), (160.0, 110.0), 1.0);
        let base = score_pcr(0, Some(&frame), &pupil, &PcrConfig::default()).unwrap();
        for (x, y) in pupil.iter_set() {
            let p = frame.get_pixel_mut(x, y);
            p.0 = p.0.map(|c| c + 30);
        }
        let shifted = score_pcr(0, Some(&frame), &pupil, &PcrConfig::default()).unwrap();
        assert_eq!(base, shifted);
    }

    #[test]
    fn needs_frames() {
        let (_, pupil) = pupil_scene(40, 40, 10.0);
        assert_eq!(
            score_pcr(0, None, &pupil, &PcrConfig::default()),
            Err(ScoreError::FramesUnavailable)
        );
    }

    #[test]
    fn empty_pupil_scores_zero() {
        let frame = RgbImage::new(40, 40);
        let risk = score_pcr(2, Some(&frame), &BinaryMask::new(40, 40), &PcrConfig::default()).unwrap();
        assert_eq!(risk, FrameRisk::zero(2, RiskDetail::MaskMissing));
    }

    #[test]
    fn equalization_spreads_two_levels() {
        let mask = BinaryMask::from_fn(4, 1, |x, _| x < 3);
        assert_eq!(equalize_within(&[10, 10, 90, 200], &mask), vec![0, 0, 255, 0]);
    }
}
