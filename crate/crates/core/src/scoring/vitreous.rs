//! Vitreous loss: a pupil sector bulging out relative to the rest of the contour.

use super::{FrameRisk, RiskDetail, VitreousConfig};
use crate::geometry::{radius_profile, BinaryMask};

/// Largest present sector mean radius over the mean of all boundary radii.
pub fn score_vitreous(frame_index: usize, pupil: &BinaryMask, config: &VitreousConfig) -> FrameRisk {
    let Ok(profile) = radius_profile(pupil, config.sectors) else {
        return FrameRisk::zero(frame_index, RiskDetail::MaskMissing);
    };
    let present = profile.present_sectors();
    if present < config.min_present_sectors {
        return FrameRisk::zero(
            frame_index,
            RiskDetail::Occluded {
                present_sectors: present,
            },
        );
    }
    let mean_radius = profile.mean_radius();
    match profile.max_sector() {
        Some((sector, sector_radius)) if mean_radius > 0.0 => FrameRisk {
            frame: frame_index,
            score: sector_radius / mean_radius,
            detail: RiskDetail::VitreousSector {
                sector,
                sector_radius,
                mean_radius,
                present_sectors: present,
            },
        },
        // single-pixel masks have zero radius everywhere
        _ => FrameRisk::zero(frame_index, RiskDetail::NoEvidence),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wedge_disk(w: u32, h: u32, cx: f64, cy: f64, r: f64, factor: f64, from_deg: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let d = dx.hypot(dy);
            let a = dy.atan2(dx).to_degrees().rem_euclid(360.0);
            d <= r || ((a - from_deg).rem_euclid(360.0) < 30.0 && d <= r * factor)
        })
    }

    /// Independent ratio: enumerate boundary pixels directly from the mask.
    fn brute_force_ratio(mask: &BinaryMask, sectors: usize) -> f64 {
        let set: Vec<(u32, u32)> = mask.iter_set().collect();
        let n = set.len() as f64;
        let cx = set.iter().map(|p| p.0 as f64).sum::<f64>() / n;
        let cy = set.iter().map(|p| p.1 as f64).sum::<f64>() / n;
        let mut per = vec![Vec::new(); sectors];
        let mut all = Vec::new();
        for &(x, y) in &set {
            let inner = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .all(|(dx, dy)| mask.get_signed(x as i64 + dx, y as i64 + dy));
            if inner {
                continue;
            }
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let r = dx.hypot(dy);
            let a = dy.atan2(dx).to_degrees().rem_euclid(360.0);
            per[((a / (360.0 / sectors as f64)) as usize).min(sectors - 1)].push(r);
            all.push(r);
        }
        let max = per
            .iter()
            .filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .fold(f64::MIN, f64::max);
        max / (all.iter().sum::<f64>() / all.len() as f64)
    }

    #[test]
    fn round_pupil_is_near_one() {
        let m = wedge_disk(300, 300, 150.0, 150.0, 60.0, 1.0, 0.0);
        let risk = score_vitreous(0, &m, &VitreousConfig::default());
        assert!((1.0..=1.05).contains(&risk.score), "{}", risk.score);
    }

    #[test]
    fn wedge_raises_the_ratio() {
        let m = wedge_disk(300, 300, 150.0, 150.0, 50.0, 1.3, 0.0);
        let oracle = brute_force_ratio(&m, 12);
        assert!(oracle > 1.15, "{oracle}");
        let risk = score_vitreous(0, &m, &VitreousConfig::default());
        assert!((risk.score - oracle).abs() < 1e-12);
        match risk.detail {
            RiskDetail::VitreousSector { sector, .. } => assert_eq!(sector, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_pupil_is_flagged() {
        let risk = score_vitreous(4, &BinaryMask::new(20, 20), &VitreousConfig::default());
        assert_eq!(risk, FrameRisk::zero(4, RiskDetail::MaskMissing));
    }

    #[test]
    fn heavy_occlusion_scores_zero() {
        // thin horizontal sliver: boundary samples only around 0 and 180 degrees
        let m = BinaryMask::from_fn(100, 100, |x, y| y == 50 && (20..80).contains(&x));
        let cfg = VitreousConfig {
            min_present_sectors: 6,
            ..Default::default()
        };
        let risk = score_vitreous(0, &m, &cfg);
        assert_eq!(risk.score, 0.0);
        assert!(matches!(risk.detail, RiskDetail::Occluded { present_sectors } if present_sectors < 6));
    }
}
