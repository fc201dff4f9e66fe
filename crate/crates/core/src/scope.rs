//! Phase-aware frame ranges for each complication.
//!
//! Iris prolapse can happen at any time and is searched over the whole video.
//! PCR is searched during cortical wash, when the posterior capsule is
//! exposed. Vitreous loss is searched from the start of cortical wash up to the
//! start of artificial lens insertion.

use serde::{Deserialize, Serialize};

use crate::model::{ComplicationKind, FrameRange, PhaseName, VideoManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Scope {
    Range(FrameRange),
    /// The phases this complication depends on are not annotated.
    NotApplicable,
}

impl Scope {
    pub fn range(&self) -> Option<FrameRange> {
        match self {
            Scope::Range(r) => Some(*r),
            Scope::NotApplicable => None,
        }
    }
}

/// Convex hull of every annotation with the given name.
fn phase_hull(manifest: &VideoManifest, name: &PhaseName) -> Option<FrameRange> {
    manifest.phases_named(name).fold(None, |hull, p| {
        Some(match hull {
            None => FrameRange::new(p.start_frame, p.end_frame),
            Some(h) => FrameRange::new(h.start.min(p.start_frame), h.end.max(p.end_frame)),
        })
    })
}

pub fn scope_frames(manifest: &VideoManifest, kind: ComplicationKind) -> Scope {
    let wash = phase_hull(manifest, &PhaseName::CorticalWash);
    match kind {
        ComplicationKind::IrisProlapse => Scope::Range(manifest.full_range()),
        ComplicationKind::Pcr => wash.map_or(Scope::NotApplicable, Scope::Range),
        ComplicationKind::VitreousLoss => {
            let Some(wash) = wash else {
                return Scope::NotApplicable;
            };
            let end = manifest
                .phases_named(&PhaseName::ArtificialLensInsertion)
                .map(|p| p.start_frame)
                .filter(|&s| s > wash.start)
                .min()
                .unwrap_or(manifest.frame_count);
            Scope::Range(FrameRange::new(wash.start, end))
        }
    }
}
