//! Shared domain types and the on-disk video bundle.
//!
//! A bundle is a directory holding `manifest.json`, per-frame colour images
//! under `frames/frame_%06d.png` (optional) and per-structure masks under
//! `masks/<structure>/frame_%06d.png`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BinaryMask;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Name of the per-frame file inside a frame or mask directory.
pub fn frame_file_name(frame: usize) -> String {
    format!("frame_{frame:06}.png")
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("manifest schema error: {0}")]
    Schema(String),
    #[error("phases {first} and {second} overlap")]
    PhaseOverlap { first: String, second: String },
    #[error("artificial lens insertion starts at frame {lens_start}, before cortical wash at {wash_start}")]
    PhaseOrder { wash_start: usize, lens_start: usize },
    #[error("{}: expected {}x{}, found {}x{}", path.display(), expected.0, expected.1, found.0, found.1)]
    DimensionMismatch {
        path: PathBuf,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("frame {frame} outside [0, {frame_count})")]
    FrameOutOfRange { frame: usize, frame_count: usize },
    #[error("bundle has no frames (has_frames = false)")]
    FramesUnavailable,
    #[error("cannot decode {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The three complications the pipeline detects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplicationKind {
    IrisProlapse,
    Pcr,
    VitreousLoss,
}

impl ComplicationKind {
    pub const ALL: [ComplicationKind; 3] = [
        ComplicationKind::IrisProlapse,
        ComplicationKind::Pcr,
        ComplicationKind::VitreousLoss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComplicationKind::IrisProlapse => "iris_prolapse",
            ComplicationKind::Pcr => "pcr",
            ComplicationKind::VitreousLoss => "vitreous_loss",
        }
    }

    /// Human-readable name used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            ComplicationKind::IrisProlapse => "Iris Prolapse",
            ComplicationKind::Pcr => "PCR",
            ComplicationKind::VitreousLoss => "Vitreous Loss",
        }
    }
}

impl fmt::Display for ComplicationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComplicationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iris_prolapse" | "iris" => Ok(ComplicationKind::IrisProlapse),
            "pcr" => Ok(ComplicationKind::Pcr),
            "vitreous_loss" | "vitreous" => Ok(ComplicationKind::VitreousLoss),
            other => Err(format!("unknown complication kind `{other}`")),
        }
    }
}

/// Tracked anatomical structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Pupil,
    Iris,
}

impl Structure {
    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Pupil => "pupil",
            Structure::Iris => "iris",
        }
    }
}

/// Surgical phase label. Unrecognised names are kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum PhaseName {
    CorticalWash,
    LensNucleusRemoval,
    ArtificialLensInsertion,
    Other(String),
}

impl From<String> for PhaseName {
    fn from(s: String) -> Self {
        match s.as_str() {
            "cortical_wash" => PhaseName::CorticalWash,
            "lens_nucleus_removal" => PhaseName::LensNucleusRemoval,
            "artificial_lens_insertion" => PhaseName::ArtificialLensInsertion,
            _ => PhaseName::Other(s),
        }
    }
}

impl From<PhaseName> for String {
    fn from(p: PhaseName) -> Self {
        match p {
            PhaseName::CorticalWash => "cortical_wash".into(),
            PhaseName::LensNucleusRemoval => "lens_nucleus_removal".into(),
            PhaseName::ArtificialLensInsertion => "artificial_lens_insertion".into(),
            PhaseName::Other(s) => s,
        }
    }
}

impl fmt::Display for PhaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from(self.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseAnnotation {
    pub phase_name: PhaseName,
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
}

/// Half-open frame interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRange {
    pub start: usize,
    pub end: usize,
}

impl FrameRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start..self.end).contains(&frame)
    }

    pub fn contains_range(&self, other: &FrameRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &FrameRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Description of one video bundle, as stored in `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoManifest {
    pub video_id: String,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    pub frame_dir: PathBuf,
    pub mask_dirs: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub phases: Vec<PhaseAnnotation>,
    pub has_frames: bool,
    /// Bundle directory; relative paths above resolve against it.
    #[serde(skip)]
    pub root: PathBuf,
}

impl VideoManifest {
    pub fn frame_path(&self, frame: usize) -> PathBuf {
        self.root.join(&self.frame_dir).join(frame_file_name(frame))
    }

    /// Path of the mask file, or `None` when the structure has no mask directory.
    pub fn mask_path(&self, structure: Structure, frame: usize) -> Option<PathBuf> {
        self.mask_dirs
            .get(structure.as_str())
            .map(|dir| self.root.join(dir).join(frame_file_name(frame)))
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn full_range(&self) -> FrameRange {
        FrameRange::new(0, self.frame_count)
    }

    /// Annotations with the given phase name, in start order.
    pub fn phases_named<'a>(
        &'a self,
        name: &'a PhaseName,
    ) -> impl Iterator<Item = &'a PhaseAnnotation> + 'a {
        self.phases.iter().filter(move |p| &p.phase_name == name)
    }

    /// Checks field values and phase layout without touching the filesystem.
    pub fn validate_fields(&self) -> Result<(), BundleError> {
        if self.video_id.trim().is_empty() {
            return Err(BundleError::Schema("video_id must not be empty".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(BundleError::Schema(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(BundleError::Schema("width and height must be positive".into()));
        }
        if self.frame_count == 0 {
            return Err(BundleError::Schema("frame_count must be positive".into()));
        }
        for required in ["pupil", "iris"] {
            if !self.mask_dirs.contains_key(required) {
                return Err(BundleError::Schema(format!(
                    "mask_dirs is missing required structure `{required}`"
                )));
            }
        }
        for p in &self.phases {
            if p.start_frame >= p.end_frame || p.end_frame > self.frame_count {
                return Err(BundleError::Schema(format!(
                    "phase {} [{}, {}) must satisfy 0 <= start < end <= {}",
                    p.phase_name, p.start_frame, p.end_frame, self.frame_count
                )));
            }
        }
        let mut sorted: Vec<&PhaseAnnotation> = self.phases.iter().collect();
        sorted.sort_by_key(|p| (p.start_frame, p.end_frame));
        for pair in sorted.windows(2) {
            if pair[1].start_frame < pair[0].end_frame {
                let show =
                    |p: &PhaseAnnotation| format!("{}[{},{})", p.phase_name, p.start_frame, p.end_frame);
                return Err(BundleError::PhaseOverlap {
                    first: show(pair[0]),
                    second: show(pair[1]),
                });
            }
        }
        let first_start = |name: PhaseName| {
            self.phases_named(&name).map(|p| p.start_frame).min()
        };
        if let (Some(wash_start), Some(lens_start)) = (
            first_start(PhaseName::CorticalWash),
            first_start(PhaseName::ArtificialLensInsertion),
        ) {
            if lens_start < wash_start {
                return Err(BundleError::PhaseOrder {
                    wash_start,
                    lens_start,
                });
            }
        }
        Ok(())
    }

    /// Verifies that every frame (when declared) and every mask file exists.
    /// Reports the first missing path in frame order.
    pub fn validate_files(&self) -> Result<(), BundleError> {
        let structures: Vec<&PathBuf> = self.mask_dirs.values().collect();
        for frame in 0..self.frame_count {
            let name = frame_file_name(frame);
            for dir in &structures {
                let path = self.root.join(dir).join(&name);
                if !path.is_file() {
                    return Err(BundleError::MissingFile(path));
                }
            }
            if self.has_frames {
                let path = self.frame_path(frame);
                if !path.is_file() {
                    return Err(BundleError::MissingFile(path));
                }
            }
        }
        Ok(())
    }

    fn check_frame(&self, frame: usize) -> Result<(), BundleError> {
        if frame >= self.frame_count {
            return Err(BundleError::FrameOutOfRange {
                frame,
                frame_count: self.frame_count,
            });
        }
        Ok(())
    }
}

/// Reads and validates `manifest.json` from a bundle directory (or the
/// manifest file itself).
pub fn load_manifest(path: impl AsRef<Path>) -> Result<VideoManifest, BundleError> {
    let path = path.as_ref();
    let (root, file) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
            path.to_path_buf(),
        )
    };
    if !file.is_file() {
        return Err(BundleError::MissingFile(file));
    }
    let text = std::fs::read_to_string(&file).map_err(|source| BundleError::Io {
        path: file.clone(),
        source,
    })?;
    let mut manifest: VideoManifest =
        serde_json::from_str(&text).map_err(|e| BundleError::Schema(e.to_string()))?;
    manifest.root = root;
    manifest.validate_fields()?;
    manifest.validate_files()?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &VideoManifest, dir: &Path) -> Result<(), BundleError> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|source| BundleError::Io { path, source })
}

fn open_image(path: &Path) -> Result<image::DynamicImage, BundleError> {
    if !path.is_file() {
        return Err(BundleError::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|source| BundleError::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn check_dims(manifest: &VideoManifest, path: &Path, found: (u32, u32)) -> Result<(), BundleError> {
    if found != manifest.resolution() {
        return Err(BundleError::DimensionMismatch {
            path: path.to_path_buf(),
            expected: manifest.resolution(),
            found,
        });
    }
    Ok(())
}

/// Loads one mask, binarized at 128.
pub fn load_mask(
    manifest: &VideoManifest,
    structure: Structure,
    frame: usize,
) -> Result<BinaryMask, BundleError> {
    manifest.check_frame(frame)?;
    let path = manifest.mask_path(structure, frame).ok_or_else(|| {
        BundleError::Schema(format!("no mask directory for `{}`", structure.as_str()))
    })?;
    let gray = open_image(&path)?.into_luma8();
    check_dims(manifest, &path, gray.dimensions())?;
    Ok(BinaryMask::from_gray(&gray))
}

/// Loads one colour frame.
pub fn load_frame(manifest: &VideoManifest, frame: usize) -> Result<RgbImage, BundleError> {
    if !manifest.has_frames {
        return Err(BundleError::FramesUnavailable);
    }
    manifest.check_frame(frame)?;
    let path = manifest.frame_path(frame);
    let rgb = open_image(&path)?.into_rgb8();
    check_dims(manifest, &path, rgb.dimensions())?;
    Ok(rgb)
}
