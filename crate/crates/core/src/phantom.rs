//! Synthetic eye bundles with known complications.
//!
//! The eye is drawn as concentric disks centred in the frame: sclera
//! background, brown iris disk, dark pupil disk. Masks come straight from the
//! renderer's geometry, so they are exact. Anomalies are drawn on top for
//! their frame interval:
//!
//! - iris prolapse: an iris-coloured blob of `magnitude` px area outside the
//!   iris, inside the periphery band the iris scorer searches;
//! - PCR: a bright horizontal line of `magnitude` px length through the pupil
//!   centre;
//! - vitreous loss: one 30° sector of the pupil pushed out to `magnitude` times
//!   the pupil radius.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BinaryMask;
use crate::model::{
    frame_file_name, write_manifest, BundleError, ComplicationKind, FrameRange, PhaseAnnotation,
    Structure, VideoManifest,
};

pub const SCLERA: [u8; 3] = [230, 225, 220];
pub const IRIS: [u8; 3] = [105, 70, 45];
pub const PUPIL: [u8; 3] = [25, 20, 20];
pub const LINE: [u8; 3] = [200, 200, 210];
pub const TRUTH_FILE: &str = "truth.json";

/// Band fraction the blob is sized for; matches the iris scorer default.
const BLOB_BAND_FRACTION: f64 = 0.15;
const LINE_THICKNESS: i64 = 3;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
}

/// One injected complication; also the ground-truth record in `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthInterval {
    pub kind: ComplicationKind,
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
    /// Blob area in px, line length in px, or wedge radius multiplier.
    pub magnitude: f64,
}

pub type AnomalySpec = TruthInterval;

impl TruthInterval {
    pub fn new(kind: ComplicationKind, start_frame: usize, end_frame: usize, magnitude: f64) -> Self {
        Self {
            kind,
            start_frame,
            end_frame,
            magnitude,
        }
    }

    pub fn range(&self) -> FrameRange {
        FrameRange::new(self.start_frame, self.end_frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub video_id: String,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub iris_radius: f64,
    pub pupil_radius: f64,
    pub phases: Vec<PhaseAnnotation>,
    pub anomalies: Vec<AnomalySpec>,
    /// Standard deviation of per-channel Gaussian noise; 0 disables it.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Angle where the vitreous wedge starts, degrees clockwise from +x
    /// (image y points down).
    #[serde(default)]
    pub wedge_start_deg: f64,
    /// Angle of the prolapse blob centre.
    #[serde(default = "default_blob_angle")]
    pub blob_angle_deg: f64,
}

fn default_blob_angle() -> f64 {
    315.0
}

impl PhantomSpec {
    /// A clean 960×540 eye with no phases and no anomalies.
    pub fn new(video_id: impl Into<String>, frame_count: usize) -> Self {
        Self {
            seed: 0,
            video_id: video_id.into(),
            frame_count,
            width: 960,
            height: 540,
            fps: 5.0,
            iris_radius: 160.0,
            pupil_radius: 70.0,
            phases: Vec::new(),
            anomalies: Vec::new(),
            noise_sigma: 0.0,
            wedge_start_deg: 0.0,
            blob_angle_deg: default_blob_angle(),
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidSpec(m));
        let half = self.width.min(self.height) as f64 / 2.0;
        if !(self.pupil_radius > 0.0 && self.pupil_radius < self.iris_radius && self.iris_radius < half) {
            return bad(format!(
                "need 0 < pupil_radius ({}) < iris_radius ({}) < {half}",
                self.pupil_radius, self.iris_radius
            ));
        }
        if self.frame_count == 0 {
            return bad("frame_count must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and non-negative", self.noise_sigma));
        }
        for a in &self.anomalies {
            if a.start_frame >= a.end_frame || a.end_frame > self.frame_count {
                return bad(format!(
                    "{} interval [{}, {}) is empty or beyond {} frames",
                    a.kind, a.start_frame, a.end_frame, self.frame_count
                ));
            }
            if !(a.magnitude > 0.0 && a.magnitude.is_finite()) {
                return bad(format!("{} magnitude {} must be positive", a.kind, a.magnitude));
            }
            if a.kind == ComplicationKind::VitreousLoss && self.pupil_radius * a.magnitude >= self.iris_radius {
                return bad("vitreous wedge would leave the iris".into());
            }
        }
        Ok(())
    }

    fn centre(&self) -> (f64, f64) {
        ((self.width / 2) as f64, (self.height / 2) as f64)
    }
}

/// Geometry active on one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct FrameState {
    blob_area: Option<f64>,
    line_length: Option<f64>,
    wedge_factor: Option<f64>,
}

impl FrameState {
    fn at(spec: &PhantomSpec, frame: usize) -> Self {
        let mut s = FrameState::default();
        for a in spec.anomalies.iter().filter(|a| a.range().contains(frame)) {
            let slot = match a.kind {
                ComplicationKind::IrisProlapse => &mut s.blob_area,
                ComplicationKind::Pcr => &mut s.line_length,
                ComplicationKind::VitreousLoss => &mut s.wedge_factor,
            };
            *slot = Some(slot.map_or(a.magnitude, |m: f64| m.max(a.magnitude)));
        }
        s
    }

    fn key(&self) -> [u64; 3] {
        [self.blob_area, self.line_length, self.wedge_factor].map(|m| m.map_or(0, f64::to_bits))
    }
}

struct Rendered {
    frame: RgbImage,
    pupil: BinaryMask,
    iris: BinaryMask,
}

fn angle_deg(dx: f64, dy: f64) -> f64 {
    dy.atan2(dx).to_degrees().rem_euclid(360.0)
}

fn render(spec: &PhantomSpec, state: &FrameState) -> Rendered {
    let (cx, cy) = spec.centre();
    let (r_iris, r_pupil) = (spec.iris_radius, spec.pupil_radius);

    // blob: radial half-axis capped so it stays inside the periphery band
    let blob = state.blob_area.map(|area| {
        let band = BLOB_BAND_FRACTION * r_iris;
        let r_eq = (area / std::f64::consts::PI).sqrt();
        let radial = r_eq.min(band / 2.0 - 1.5).max(1.0);
        let tangential = area / (std::f64::consts::PI * radial);
        let theta = spec.blob_angle_deg.to_radians();
        let dist = r_iris + band / 2.0;
        (cx + dist * theta.cos(), cy + dist * theta.sin(), theta, radial, tangential)
    });

    let in_pupil = |dx: f64, dy: f64| {
        let d = dx.hypot(dy);
        if d <= r_pupil {
            return true;
        }
        match state.wedge_factor {
            Some(f) => (angle_deg(dx, dy) - spec.wedge_start_deg).rem_euclid(360.0) < 30.0 && d <= r_pupil * f,
            None => false,
        }
    };

    let mut frame = RgbImage::new(spec.width, spec.height);
    let mut pupil = BinaryMask::new(spec.width, spec.height);
    let mut iris = BinaryMask::new(spec.width, spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let mut colour = SCLERA;
            if dx.hypot(dy) <= r_iris {
                iris.set(x, y, true);
                colour = IRIS;
            }
            if in_pupil(dx, dy) {
                pupil.set(x, y, true);
                colour = PUPIL;
            }
            if let Some((bx, by, theta, radial, tangential)) = blob {
                let (ux, uy) = (x as f64 - bx, y as f64 - by);
                let r = ux * theta.cos() + uy * theta.sin();
                let t = -ux * theta.sin() + uy * theta.cos();
                if (r / radial).powi(2) + (t / tangential).powi(2) <= 1.0 && dx.hypot(dy) > r_iris {
                    colour = IRIS;
                }
            }
            frame.put_pixel(x, y, Rgb(colour));
        }
    }

    if let Some(length) = state.line_length {
        let half = (length / 2.0).min(r_pupil - 3.0).max(0.0);
        let (x0, x1) = ((cx - half).round() as i64, (cx + half).round() as i64);
        let y_mid = cy as i64;
        for y in y_mid - LINE_THICKNESS / 2..=y_mid + LINE_THICKNESS / 2 {
            for x in x0..x1 {
                if pupil.get_signed(x, y) {
                    frame.put_pixel(x as u32, y as u32, Rgb(LINE));
                }
            }
        }
    }
    Rendered { frame, pupil, iris }
}

fn add_noise(frame: &mut RgbImage, sigma: f64, seed: u64, index: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    for px in frame.pixels_mut() {
        for c in px.0.iter_mut() {
            *c = (*c as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
        }
    }
}

fn encode_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    image::DynamicImage::ImageRgb8(img.clone())
        .write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out
}

fn encode_gray(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    image::DynamicImage::ImageLuma8(img.clone())
        .write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PhantomError> {
    fs::write(path, bytes).map_err(|source| PhantomError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), PhantomError> {
    fs::create_dir_all(path).map_err(|source| PhantomError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Frame and masks for one frame index, without touching disk.
pub fn render_frame(spec: &PhantomSpec, index: usize) -> (RgbImage, BinaryMask, BinaryMask) {
    let state = FrameState::at(spec, index);
    let mut r = render(spec, &state);
    if spec.noise_sigma > 0.0 {
        add_noise(&mut r.frame, spec.noise_sigma, spec.seed, index);
    }
    (r.frame, r.pupil, r.iris)
}

/// Writes a complete bundle plus `truth.json` into `out_dir`.
pub fn synth_bundle(spec: &PhantomSpec, out_dir: &Path) -> Result<VideoManifest, PhantomError> {
    spec.validate()?;
    let manifest = VideoManifest {
        video_id: spec.video_id.clone(),
        fps: spec.fps,
        width: spec.width,
        height: spec.height,
        frame_count: spec.frame_count,
        frame_dir: "frames".into(),
        mask_dirs: [(Structure::Pupil, "masks/pupil"), (Structure::Iris, "masks/iris")]
            .into_iter()
            .map(|(s, d)| (s.as_str().to_string(), d.into()))
            .collect(),
        phases: spec.phases.clone(),
        has_frames: true,
        root: out_dir.to_path_buf(),
    };
    manifest.validate_fields()?;
    for dir in ["frames", "masks/pupil", "masks/iris"] {
        create_dir(&out_dir.join(dir))?;
    }

    // without noise, frames with the same anomaly state are identical
    let mut cache: HashMap<[u64; 3], [Vec<u8>; 3]> = HashMap::new();
    for index in 0..spec.frame_count {
        let state = FrameState::at(spec, index);
        let encode = || {
            let mut r = render(spec, &state);
            if spec.noise_sigma > 0.0 {
                add_noise(&mut r.frame, spec.noise_sigma, spec.seed, index);
            }
            [encode_rgb(&r.frame), encode_gray(&r.pupil.to_gray()), encode_gray(&r.iris.to_gray())]
        };
        let fresh;
        let files = if spec.noise_sigma > 0.0 {
            fresh = encode();
            &fresh
        } else {
            cache.entry(state.key()).or_insert_with(encode)
        };
        let name = frame_file_name(index);
        write(&out_dir.join("frames").join(&name), &files[0])?;
        write(&out_dir.join("masks/pupil").join(&name), &files[1])?;
        write(&out_dir.join("masks/iris").join(&name), &files[2])?;
    }

    write_manifest(&manifest, out_dir)?;
    write_truth(&spec.anomalies, out_dir)?;
    Ok(manifest)
}

pub fn write_truth(intervals: &[TruthInterval], dir: &Path) -> Result<(), PhantomError> {
    let text = serde_json::to_string_pretty(intervals).expect("truth intervals serialize");
    write(&dir.join(TRUTH_FILE), text.as_bytes())
}

/// Reads `truth.json` from a bundle directory.
pub fn load_truth(dir: &Path) -> Result<Vec<TruthInterval>, PhantomError> {
    let path = dir.join(TRUTH_FILE);
    let text = fs::read_to_string(&path).map_err(|source| PhantomError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| PhantomError::InvalidSpec(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_frame, load_manifest, load_mask};
    use crate::scoring::{score_iris_prolapse, score_pcr, score_vitreous, ScoringConfig};

    fn small(id: &str) -> PhantomSpec {
        PhantomSpec {
            width: 480,
            height: 270,
            iris_radius: 110.0,
            pupil_radius: 45.0,
            ..PhantomSpec::new(id, 6)
        }
    }

    #[test]
    fn pupil_mask_is_exactly_the_dark_pixels() {
        let spec = PhantomSpec {
            anomalies: vec![TruthInterval::new(ComplicationKind::VitreousLoss, 0, 6, 1.3)],
            ..small("v")
        };
        let (frame, pupil, iris) = render_frame(&spec, 2);
        for (x, y, px) in frame.enumerate_pixels() {
            assert_eq!(px.0 == PUPIL, pupil.get(x, y), "({x},{y})");
        }
        assert!(pupil.difference(&iris).is_empty());
    }

    #[test]
    fn clean_phantom_scores_null() {
        let spec = small("clean");
        let cfg = ScoringConfig::default();
        let (frame, pupil, iris) = render_frame(&spec, 0);
        assert_eq!(score_iris_prolapse(0, &frame, &iris, &cfg.iris).score, 0.0);
        assert_eq!(score_pcr(0, Some(&frame), &pupil, &cfg.pcr).unwrap().score, 0.0);
        assert!(score_vitreous(0, &pupil, &cfg.vitreous).score <= 1.05);
    }

    #[test]
    fn blob_area_is_recovered() {
        let spec = PhantomSpec {
            anomalies: vec![TruthInterval::new(ComplicationKind::IrisProlapse, 1, 3, 400.0)],
            ..PhantomSpec::new("blob", 4)
        };
        let cfg = ScoringConfig::default();
        for i in 0..4 {
            let (frame, _, iris) = render_frame(&spec, i);
            let s = score_iris_prolapse(i, &frame, &iris, &cfg.iris).score;
            if (1..3).contains(&i) {
                assert!((350.0..=450.0).contains(&s), "frame {i}: {s}");
            } else {
                assert_eq!(s, 0.0);
            }
        }
    }

    #[test]
    fn bundle_round_trips_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec {
            noise_sigma: 2.0,
            seed: 7,
            anomalies: vec![TruthInterval::new(ComplicationKind::Pcr, 2, 4, 60.0)],
            ..small("det")
        };
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        synth_bundle(&spec, &a).unwrap();
        synth_bundle(&spec, &b).unwrap();
        for rel in ["manifest.json", "truth.json", "frames/frame_000003.png", "masks/pupil/frame_000005.png"] {
            assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
        }
        let m = load_manifest(&a).unwrap();
        m.validate_files().unwrap();
        let (frame, pupil, _) = render_frame(&spec, 3);
        assert_eq!(load_frame(&m, 3).unwrap(), frame);
        assert_eq!(load_mask(&m, Structure::Pupil, 3).unwrap(), pupil);
        assert_eq!(load_truth(&a).unwrap(), spec.anomalies);
    }

    #[test]
    fn invalid_specs() {
        let mut s = small("x");
        s.pupil_radius = 200.0;
        assert!(matches!(s.validate(), Err(PhantomError::InvalidSpec(_))));
        let s = PhantomSpec {
            anomalies: vec![TruthInterval::new(ComplicationKind::Pcr, 4, 9, 10.0)],
            ..small("x")
        };
        assert!(s.validate().is_err());
    }
}
