//! Decoupled character integration: segment every character in a scene
//! clip, swap in each character's portrait identity, then drive lip motion
//! from each dialogue line.
//!
//! Backends do the pixel work; the engine audits every stage. A stage may
//! only touch pixels inside its mask (and, for lip sync, frames inside the
//! line's range). Anything else is rejected with `E_LOCALITY`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{PortraitAsset, VoiceLineAsset};
use crate::backend::{BackendError, Backends, FaceSwapBackend, LipSyncBackend, SegmentationBackend};
use crate::blueprint::CharacterProfile;
use crate::media::{
    clip_digest, frame_range_to_sample_range, masks_digest, write_frames_dir, write_mask_dir, FrameRange,
    MaskSequence, MediaError, VideoClip, SAMPLE_RATE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Segmented,
    Swapped,
    Talking,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Segmented => "segmented",
            Stage::Swapped => "swapped",
            Stage::Talking => "talking",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    #[error("{stage}: {source}")]
    Backend { stage: Stage, source: BackendError },
    #[error("E_NOT_FOUND: no pixels of {0} were detected")]
    NotFound(String),
    #[error("E_LOCALITY: {stage} stage changed frame {frame} pixel {pixel} outside its region")]
    Locality { stage: Stage, frame: usize, pixel: usize },
    #[error("E_SHAPE: {stage} stage returned {detail}")]
    Shape { stage: Stage, detail: String },
    #[error("E_RANGE: frames [{}, {}) exceed a clip of {frame_count} frames", .range.start, .range.end)]
    Range { range: FrameRange, frame_count: usize },
    #[error("E_AUDIO_OVERRUN: {samples} voice samples do not fit {limit} samples of frames")]
    AudioOverrun { samples: usize, limit: u64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Media(#[from] MediaError),
}

impl IntegrationError {
    pub fn code(&self) -> &'static str {
        match self {
            IntegrationError::Backend { .. } => "E_BACKEND",
            IntegrationError::NotFound(_) => "E_NOT_FOUND",
            IntegrationError::Locality { .. } => "E_LOCALITY",
            IntegrationError::Shape { .. } => "E_SHAPE",
            IntegrationError::Range { .. } => "E_RANGE",
            IntegrationError::AudioOverrun { .. } => "E_AUDIO_OVERRUN",
            IntegrationError::Precondition(_) => "E_PRECONDITION",
            IntegrationError::Media(e) => e.code(),
        }
    }
}

/// Disjoint per-character masks for one clip, in request order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentationResult {
    pub masks: Vec<(String, MaskSequence)>,
}

impl SegmentationResult {
    pub fn get(&self, character_id: &str) -> Option<&MaskSequence> {
        self.masks.iter().find(|(id, _)| id == character_id).map(|(_, m)| m)
    }

    pub fn digest(&self) -> String {
        masks_digest(self.masks.iter().map(|(id, m)| (id.as_str(), m)))
    }

    /// Union of all masks.
    pub fn union(&self, width: u32, height: u32, frame_count: usize) -> MaskSequence {
        let mut out = MaskSequence::empty(width, height, frame_count);
        for (_, m) in &self.masks {
            for (dst, src) in out.frames.iter_mut().zip(&m.frames) {
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d |= s;
                }
            }
        }
        out
    }
}

/// Output digests of each stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationTrace {
    pub segmented: String,
    pub swapped: String,
    pub talking: String,
}

fn same_shape(a: &VideoClip, b: &VideoClip) -> bool {
    a.width == b.width && a.height == b.height && a.fps == b.fps && a.frame_count() == b.frame_count()
}

fn shape_error(stage: Stage, input: &VideoClip, output: &VideoClip) -> IntegrationError {
    IntegrationError::Shape {
        stage,
        detail: format!(
            "{}x{}@{} with {} frames for input {}x{}@{} with {} frames",
            output.width,
            output.height,
            output.fps,
            output.frame_count(),
            input.width,
            input.height,
            input.fps,
            input.frame_count()
        ),
    }
}

/// First pixel of `frame` outside `mask` where `before` and `after` differ.
fn leak_in_frame(before: &[u8], after: &[u8], mask: &[bool]) -> Option<usize> {
    if before == after {
        return None;
    }
    before
        .chunks_exact(3)
        .zip(after.chunks_exact(3))
        .zip(mask)
        .position(|((b, a), &m)| !m && b != a)
}

fn check_frame_len(stage: Stage, clip: &VideoClip) -> Result<(), IntegrationError> {
    clip.check().map_err(|e| IntegrationError::Shape { stage, detail: e.to_string() })
}

/// Segments every character. Earlier characters win contested pixels.
pub fn segment_characters(
    clip: &VideoClip,
    characters: &[(String, String)],
    backend: &dyn SegmentationBackend,
) -> Result<SegmentationResult, IntegrationError> {
    let mut keywords = BTreeSet::new();
    for (id, keyword) in characters {
        if !keywords.insert(keyword.trim().to_lowercase()) {
            return Err(IntegrationError::Precondition(format!("detection keyword of {id} is not unique")));
        }
    }
    let mut claimed = MaskSequence::empty(clip.width, clip.height, clip.frame_count());
    let mut result = SegmentationResult::default();
    for (id, keyword) in characters {
        let mut masks = backend
            .segment(clip, id, keyword)
            .map_err(|source| IntegrationError::Backend { stage: Stage::Segmented, source })?;
        if !masks.matches(clip) || masks.frames.iter().any(|f| f.len() != (clip.width * clip.height) as usize) {
            return Err(IntegrationError::Shape {
                stage: Stage::Segmented,
                detail: format!("a {}x{} mask sequence of {} frames", masks.width, masks.height, masks.frame_count()),
            });
        }
        if masks.is_all_empty() {
            return Err(IntegrationError::NotFound(id.clone()));
        }
        for (mine, taken) in masks.frames.iter_mut().zip(claimed.frames.iter_mut()) {
            for (m, t) in mine.iter_mut().zip(taken.iter_mut()) {
                if *t {
                    *m = false;
                } else if *m {
                    *t = true;
                }
            }
        }
        result.masks.push((id.clone(), masks));
    }
    Ok(result)
}

/// Replaces the masked region with the portrait identity.
pub fn swap_face(
    clip: &VideoClip,
    masks: &MaskSequence,
    portrait: &PortraitAsset,
    backend: &dyn FaceSwapBackend,
) -> Result<VideoClip, IntegrationError> {
    if !masks.matches(clip) {
        return Err(IntegrationError::Precondition("masks do not match the clip".into()));
    }
    let out = backend
        .swap(clip, masks, &portrait.image)
        .map_err(|source| IntegrationError::Backend { stage: Stage::Swapped, source })?;
    if !same_shape(clip, &out) {
        return Err(shape_error(Stage::Swapped, clip, &out));
    }
    check_frame_len(Stage::Swapped, &out)?;
    for (frame, ((before, after), mask)) in clip.frames.iter().zip(&out.frames).zip(&masks.frames).enumerate() {
        if let Some(pixel) = leak_in_frame(before, after, mask) {
            return Err(IntegrationError::Locality { stage: Stage::Swapped, frame, pixel });
        }
    }
    Ok(out)
}

/// Animates the masked region over `range` from the voice line.
pub fn apply_talking_face(
    clip: &VideoClip,
    masks: &MaskSequence,
    voice: &VoiceLineAsset,
    range: FrameRange,
    backend: &dyn LipSyncBackend,
) -> Result<VideoClip, IntegrationError> {
    if range.is_empty() || range.end as usize > clip.frame_count() {
        return Err(IntegrationError::Range { range, frame_count: clip.frame_count() });
    }
    if !masks.matches(clip) {
        return Err(IntegrationError::Precondition("masks do not match the clip".into()));
    }
    let limit = frame_range_to_sample_range(range, clip.fps, SAMPLE_RATE).len();
    if voice.audio.len() as u64 > limit {
        return Err(IntegrationError::AudioOverrun { samples: voice.audio.len(), limit });
    }
    let out = backend
        .lipsync(clip, masks, &voice.audio, range)
        .map_err(|source| IntegrationError::Backend { stage: Stage::Talking, source })?;
    if !same_shape(clip, &out) {
        return Err(shape_error(Stage::Talking, clip, &out));
    }
    check_frame_len(Stage::Talking, &out)?;
    for (frame, ((before, after), mask)) in clip.frames.iter().zip(&out.frames).zip(&masks.frames).enumerate() {
        if range.contains(frame as u32) {
            if let Some(pixel) = leak_in_frame(before, after, mask) {
                return Err(IntegrationError::Locality { stage: Stage::Talking, frame, pixel });
            }
        } else if before != after {
            let pixel = before.chunks_exact(3).zip(after.chunks_exact(3)).position(|(b, a)| b != a).unwrap_or(0);
            return Err(IntegrationError::Locality { stage: Stage::Talking, frame, pixel });
        }
    }
    Ok(out)
}

/// A character present in the scene, with its portrait.
#[derive(Debug, Clone, Copy)]
pub struct CastMember<'a> {
    pub profile: &'a CharacterProfile,
    pub portrait: &'a PortraitAsset,
}

/// A dialogue line placed in the scene. `range` is already clipped to the
/// scene.
#[derive(Debug, Clone, Copy)]
pub struct SpokenLine<'a> {
    pub character_id: &'a str,
    pub range: FrameRange,
    pub voice: &'a VoiceLineAsset,
}

/// Runs segmentation, face swap and talking face for one scene, with
/// characters processed in cast order.
pub fn integrate_scene(
    clip: &VideoClip,
    cast: &[CastMember<'_>],
    lines: &[SpokenLine<'_>],
    backends: &Backends,
    keep_dir: Option<&Path>,
) -> Result<(VideoClip, IntegrationTrace), IntegrationError> {
    let order: Vec<usize> = (0..cast.len()).collect();
    integrate_scene_in_order(clip, cast, lines, backends, keep_dir, &order)
}

/// As [`integrate_scene`], but swap and talking face visit characters in
/// `order` (a permutation of cast indices). Segmentation always uses cast
/// order, which fixes mask precedence.
pub fn integrate_scene_in_order(
    clip: &VideoClip,
    cast: &[CastMember<'_>],
    lines: &[SpokenLine<'_>],
    backends: &Backends,
    keep_dir: Option<&Path>,
    order: &[usize],
) -> Result<(VideoClip, IntegrationTrace), IntegrationError> {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..cast.len()).collect::<Vec<_>>() {
        return Err(IntegrationError::Precondition("processing order is not a permutation of the cast".into()));
    }
    let requests: Vec<(String, String)> = cast
        .iter()
        .map(|c| (c.profile.character_id.clone(), c.profile.detection_keyword.clone()))
        .collect();
    let segmentation = segment_characters(clip, &requests, backends.segmentation.as_ref())?;

    let mut swapped = clip.clone();
    for &i in order {
        let masks = &segmentation.masks[i].1;
        swapped = swap_face(&swapped, masks, cast[i].portrait, backends.faceswap.as_ref())?;
    }

    let mut talking = swapped.clone();
    for &i in order {
        let id = cast[i].profile.character_id.as_str();
        let masks = &segmentation.masks[i].1;
        for line in lines.iter().filter(|l| l.character_id == id) {
            talking = apply_talking_face(&talking, masks, line.voice, line.range, backends.lipsync.as_ref())?;
        }
    }

    let trace = IntegrationTrace {
        segmented: segmentation.digest(),
        swapped: clip_digest(&swapped),
        talking: clip_digest(&talking),
    };
    if let Some(dir) = keep_dir {
        for (id, masks) in &segmentation.masks {
            write_mask_dir(&dir.join(Stage::Segmented.as_str()).join(id), masks)?;
        }
        write_frames_dir(&dir.join(Stage::Swapped.as_str()), &swapped)?;
        write_frames_dir(&dir.join(Stage::Talking.as_str()), &talking)?;
    }
    Ok((talking, trace))
}
