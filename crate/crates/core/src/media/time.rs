use num_rational::Ratio;
use serde::{Deserialize, Serialize};

/// Half-open frame interval `[start, end)` within one scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRange {
    pub start: u32,
    pub end: u32,
}

impl FrameRange {
    /// `None` unless `start < end`.
    pub fn new(start: u32, end: u32) -> Option<Self> {
        (start < end).then_some(FrameRange { start, end })
    }

    pub fn len(&self) -> u32 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, frame: u32) -> bool {
        self.start <= frame && frame < self.end
    }

    pub fn intersects(&self, other: &FrameRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Half-open sample interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleRange {
    pub start: u64,
    pub end: u64,
}

impl SampleRange {
    pub fn len(&self) -> u64 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Exact duration of `frames` frames at `fps`.
pub fn frames_to_seconds(frames: u64, fps: u32) -> Ratio<u64> {
    assert!(fps > 0, "fps must be positive");
    Ratio::new(frames, fps as u64)
}

/// Sample index at which `frame` begins (floor).
pub fn frame_to_sample(frame: u64, fps: u32, sample_rate: u32) -> u64 {
    assert!(fps > 0, "fps must be positive");
    frame * sample_rate as u64 / fps as u64
}

/// Maps a frame range onto the audio timeline. Both ends round down, so
/// adjacent frame ranges map to adjacent sample ranges.
///
/// Requires `sample_rate >= fps`, which keeps non-empty inputs non-empty.
pub fn frame_range_to_sample_range(fr: FrameRange, fps: u32, sample_rate: u32) -> SampleRange {
    assert!(sample_rate >= fps, "sample rate must not be below the frame rate");
    SampleRange {
        start: frame_to_sample(fr.start as u64, fps, sample_rate),
        end: frame_to_sample(fr.end as u64, fps, sample_rate),
    }
}

/// Millisecond timecode at which `frame` begins (floor).
pub fn frame_to_millis(frame: u64, fps: u32) -> u64 {
    assert!(fps > 0, "fps must be positive");
    frame * 1000 / fps as u64
}

/// Audio length of a scene of `frames` frames.
pub fn scene_sample_count(frames: u64, fps: u32, sample_rate: u32) -> u64 {
    frame_to_sample(frames, fps, sample_rate)
}
