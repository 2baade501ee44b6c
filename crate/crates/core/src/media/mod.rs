//! Desk-scale media values and the frame/sample arithmetic that keeps them
//! in sync.
//!
//! Video is RGB8 row-major with no alpha, audio is mono PCM16 at
//! [`SAMPLE_RATE`], masks are one logical bit per pixel.

mod io;
mod ops;
mod time;

pub use io::{
    clip_digest, decode_pgm, decode_ppm, encode_pgm, encode_ppm, masks_digest, read_frames_dir,
    read_mask_dir, read_wav, read_wav_bytes, wav_bytes, write_frames_dir, write_mask_dir,
    write_wav, frame_file_name,
};
pub use ops::{concat_audio, concat_video, mix_tracks, overlay_samples};
pub use time::{
    frame_range_to_sample_range, frame_to_millis, frame_to_sample, frames_to_seconds,
    scene_sample_count, FrameRange, SampleRange,
};

use thiserror::Error;

/// Project-wide audio sample rate (Hz).
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MediaError {
    #[error("E_DIM_MISMATCH: expected {expected:?}, found {found:?}")]
    DimMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("E_FPS_MISMATCH: expected {expected}, found {found}")]
    FpsMismatch { expected: u32, found: u32 },
    #[error("E_EMPTY_LIST: no inputs")]
    EmptyList,
    #[error("E_RATE_MISMATCH: expected {expected} Hz, found {found} Hz")]
    RateMismatch { expected: u32, found: u32 },
    #[error("E_OVERRUN: insert of {len} samples at {at} exceeds base length {base_len}")]
    Overrun { at: usize, len: usize, base_len: usize },
    #[error("E_LEN_MISMATCH: expected {expected} samples, found {found}")]
    LenMismatch { expected: usize, found: usize },
    #[error("malformed media: {0}")]
    Malformed(String),
    #[error("media io: {0}")]
    Io(String),
}

impl MediaError {
    pub fn code(&self) -> &'static str {
        match self {
            MediaError::DimMismatch { .. } => "E_DIM_MISMATCH",
            MediaError::FpsMismatch { .. } => "E_FPS_MISMATCH",
            MediaError::EmptyList => "E_EMPTY_LIST",
            MediaError::RateMismatch { .. } => "E_RATE_MISMATCH",
            MediaError::Overrun { .. } => "E_OVERRUN",
            MediaError::LenMismatch { .. } => "E_LEN_MISMATCH",
            MediaError::Malformed(_) => "E_MALFORMED",
            MediaError::Io(_) => "E_IO",
        }
    }
}

impl From<std::io::Error> for MediaError {
    fn from(err: std::io::Error) -> Self {
        MediaError::Io(err.to_string())
    }
}

/// A single RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Raster { width, height, data }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Per-channel integer mean (floor).
    pub fn mean_color(&self) -> [u8; 3] {
        let mut sums = [0u64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += px[c] as u64;
            }
        }
        let n = (self.width as u64 * self.height as u64).max(1);
        sums.map(|s| (s / n) as u8)
    }
}

/// A fixed-rate sequence of RGB8 frames sharing one size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoClip {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub frames: Vec<Vec<u8>>,
}

impl VideoClip {
    pub fn new(width: u32, height: u32, fps: u32, frames: Vec<Vec<u8>>) -> Result<Self, MediaError> {
        let clip = VideoClip { width, height, fps, frames };
        clip.check()?;
        Ok(clip)
    }

    /// Solid-color clip.
    pub fn filled(width: u32, height: u32, fps: u32, frame_count: usize, rgb: [u8; 3]) -> Self {
        let frame = Raster::filled(width, height, rgb).data;
        VideoClip { width, height, fps, frames: vec![frame; frame_count] }
    }

    pub fn frame_len(&self) -> usize {
        self.width as usize * self.height as usize * 3
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn check(&self) -> Result<(), MediaError> {
        if self.width == 0 || self.height == 0 || self.fps == 0 {
            return Err(MediaError::Malformed("zero width, height or fps".into()));
        }
        if self.frames.is_empty() {
            return Err(MediaError::Malformed("clip has no frames".into()));
        }
        let len = self.frame_len();
        if let Some(i) = self.frames.iter().position(|f| f.len() != len) {
            return Err(MediaError::Malformed(format!(
                "frame {i} has {} bytes, expected {len}",
                self.frames[i].len()
            )));
        }
        Ok(())
    }
}

/// Mono PCM16 audio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioTrack {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl AudioTrack {
    pub fn new(samples: Vec<i16>) -> Self {
        AudioTrack { sample_rate: SAMPLE_RATE, samples }
    }

    pub fn silence(len: usize) -> Self {
        AudioTrack::new(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Root-mean-square over `[start, end)`; samples past the end count as
    /// silence.
    pub fn rms(&self, start: usize, end: usize) -> f64 {
        if end <= start {
            return 0.0;
        }
        let sum: f64 = (start..end)
            .map(|i| self.samples.get(i).map_or(0.0, |&s| (s as f64) * (s as f64)))
            .sum();
        (sum / (end - start) as f64).sqrt()
    }
}

/// Per-frame binary masks companion to a clip. `true` marks the character
/// region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    pub width: u32,
    pub height: u32,
    pub frames: Vec<Vec<bool>>,
}

impl MaskSequence {
    pub fn empty(width: u32, height: u32, frame_count: usize) -> Self {
        MaskSequence {
            width,
            height,
            frames: vec![vec![false; width as usize * height as usize]; frame_count],
        }
    }

    pub fn full(width: u32, height: u32, frame_count: usize) -> Self {
        MaskSequence {
            width,
            height,
            frames: vec![vec![true; width as usize * height as usize]; frame_count],
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn is_all_empty(&self) -> bool {
        self.frames.iter().all(|f| f.iter().all(|&b| !b))
    }

    pub fn count_set(&self) -> usize {
        self.frames.iter().map(|f| f.iter().filter(|&&b| b).count()).sum()
    }

    /// Whether this sequence matches `clip` in size and frame count.
    pub fn matches(&self, clip: &VideoClip) -> bool {
        let px = clip.width as usize * clip.height as usize;
        self.width == clip.width
            && self.height == clip.height
            && self.frames.len() == clip.frames.len()
            && self.frames.iter().all(|f| f.len() == px)
    }
}
