use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::AdjudicationError;
use crate::geometry::{BinaryMask, BoundingBox};

/// Inclusive pixel rectangle of a crop within its frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl CropRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }
}

fn union_bbox(iris: &BinaryMask, pupil: &BinaryMask) -> Option<BoundingBox> {
    let mut bbox: Option<BoundingBox> = None;
    for (x, y) in iris.iter_set().chain(pupil.iter_set()) {
        let b = bbox.get_or_insert(BoundingBox {
            min_x: x,
            min_y: y,
            max_x: x,
            max_y: y,
        });
        b.min_x = b.min_x.min(x);
        b.min_y = b.min_y.min(y);
        b.max_x = b.max_x.max(x);
        b.max_y = b.max_y.max(y);
    }
    bbox
}

/// Bounding box of `iris ∪ pupil`, each side pushed out by
/// `round(extent * margin_fraction)` and clipped to `width × height`.
///
/// Extent is `max - min` along the axis, so a box spanning x 100..=500 with
/// margin 0.1 becomes 60..=540.
pub fn roi_rect(
    iris: &BinaryMask,
    pupil: &BinaryMask,
    width: u32,
    height: u32,
    margin_fraction: f64,
) -> Result<CropRect, AdjudicationError> {
    let b = union_bbox(iris, pupil).ok_or(AdjudicationError::BothMasksEmpty)?;
    let dx = ((b.max_x - b.min_x) as f64 * margin_fraction).round() as u32;
    let dy = ((b.max_y - b.min_y) as f64 * margin_fraction).round() as u32;
    Ok(CropRect {
        x0: b.min_x.saturating_sub(dx),
        y0: b.min_y.saturating_sub(dy),
        x1: (b.max_x + dx).min(width.saturating_sub(1)),
        y1: (b.max_y + dy).min(height.saturating_sub(1)),
    })
}

/// Sub-image around the eye at native resolution.
pub fn crop_roi(
    frame: Option<&RgbImage>,
    iris: &BinaryMask,
    pupil: &BinaryMask,
    margin_fraction: f64,
) -> Result<(RgbImage, CropRect), AdjudicationError> {
    let frame = frame.ok_or(AdjudicationError::FramesUnavailable)?;
    let rect = roi_rect(iris, pupil, frame.width(), frame.height(), margin_fraction)?;
    let crop = image::imageops::crop_imm(frame, rect.x0, rect.y0, rect.width(), rect.height())
        .to_image();
    Ok((crop, rect))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| (x0..=x1).contains(&x) && (y0..=y1).contains(&y))
    }

    #[test]
    fn dilates_by_ten_percent_of_extent() {
        let iris = rect_mask(960, 540, 100, 100, 500, 400);
        let pupil = BinaryMask::new(960, 540);
        let r = roi_rect(&iris, &pupil, 960, 540, 0.10).unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (60, 70, 540, 430));
        let frame = RgbImage::new(960, 540);
        let (crop, _) = crop_roi(Some(&frame), &iris, &pupil, 0.10).unwrap();
        assert_eq!(crop.dimensions(), (481, 361));
    }

    #[test]
    fn clipped_at_frame_edges() {
        let iris = rect_mask(100, 80, 0, 5, 99, 79);
        let r = roi_rect(&iris, &BinaryMask::new(100, 80), 100, 80, 0.10).unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (0, 0, 99, 79));
    }

    #[test]
    fn union_of_both_masks() {
        let iris = rect_mask(100, 100, 10, 10, 20, 20);
        let pupil = rect_mask(100, 100, 50, 60, 70, 80);
        let r = roi_rect(&iris, &pupil, 100, 100, 0.0).unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (10, 10, 70, 80));
    }

    #[test]
    fn errors() {
        let empty = BinaryMask::new(10, 10);
        let frame = RgbImage::new(10, 10);
        assert!(matches!(
            crop_roi(Some(&frame), &empty, &empty, 0.1),
            Err(AdjudicationError::BothMasksEmpty)
        ));
        assert!(matches!(
            crop_roi(None, &rect_mask(10, 10, 1, 1, 2, 2), &empty, 0.1),
            Err(AdjudicationError::FramesUnavailable)
        ));
    }
}
