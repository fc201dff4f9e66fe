//! Shared fixtures for the benchmarks.

use ccd_core::geometry::BinaryMask;
use ccd_core::model::ComplicationKind;
use ccd_core::phantom::{render_frame, PhantomSpec, TruthInterval};
use image::RgbImage;

/// A 960×540 phantom frame with all three complications drawn.
pub fn busy_frame() -> (RgbImage, BinaryMask, BinaryMask) {
    let spec = PhantomSpec {
        anomalies: vec![
            TruthInterval::new(ComplicationKind::IrisProlapse, 0, 1, 300.0),
            TruthInterval::new(ComplicationKind::Pcr, 0, 1, 80.0),
            TruthInterval::new(ComplicationKind::VitreousLoss, 0, 1, 1.25),
        ],
        ..PhantomSpec::new("bench", 1)
    };
    render_frame(&spec, 0)
}

/// Deterministic trace with a plateau above 1 every 150 frames.
pub fn synthetic_trace(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| if (i / 50) % 3 == 0 { 1.5 } else { (i % 7) as f64 / 10.0 })
        .collect()
}
