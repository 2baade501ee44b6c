//! Scene composition and final movie assembly.
//!
//! Each scene gets a music bed fitted to its length, ducked under dialogue,
//! with voice lines laid over it and SRT subtitles derived from the frame
//! ranges. Scenes are then cut together in order and the run is recorded in
//! a hash-verified manifest.

use std::fs;
use std::io::Write as _;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assets::AssetKind;
use crate::backend::{BackendError, BackendUris, MusicBackend};
use crate::blueprint::{MusicDirection, SceneSpec};
use crate::canonical::{sha256_hex, to_canonical_string};
use crate::integration::IntegrationTrace;
use crate::media::{
    concat_audio, concat_video, encode_ppm, frame_file_name, frame_range_to_sample_range, frame_to_millis,
    mix_tracks, overlay_samples, scene_sample_count, wav_bytes, AudioTrack, FrameRange, MediaError, VideoClip,
    SAMPLE_RATE,
};

/// Music gain while dialogue is playing, as a ratio.
pub const DUCK_GAIN: (i64, i64) = (3, 10);
/// Ducking persists this many samples (250 ms) past the end of a line.
pub const DUCK_RELEASE_SAMPLES: u64 = SAMPLE_RATE as u64 / 4;
/// Linear fade-out length (100 ms) at the end of a fitted music track.
pub const FADE_OUT_SAMPLES: usize = SAMPLE_RATE as usize / 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("E_DURATION: {what}: expected {expected}, found {found}")]
    Duration { what: String, expected: u64, found: u64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("E_MISSING: {0} does not exist")]
    Missing(String),
    #[error("E_CORRUPT: {0} fails hash verification")]
    Corrupt(String),
    #[error("E_IO: {0}")]
    Io(String),
}

impl AssemblyError {
    pub fn code(&self) -> &'static str {
        match self {
            AssemblyError::Backend(_) => "E_BACKEND",
            AssemblyError::Duration { .. } => "E_DURATION",
            AssemblyError::Precondition(_) => "E_PRECONDITION",
            AssemblyError::Media(e) => e.code(),
            AssemblyError::Missing(_) => "E_MISSING",
            AssemblyError::Corrupt(_) => "E_CORRUPT",
            AssemblyError::Io(_) => "E_IO",
        }
    }
}

impl From<std::io::Error> for AssemblyError {
    fn from(err: std::io::Error) -> Self {
        AssemblyError::Io(err.to_string())
    }
}

/// `sample * num / den`, rounded half away from zero.
fn scale_sample(sample: i16, num: i64, den: i64) -> i16 {
    let p = sample as i64 * num;
    let q = (p.abs() * 2 + den) / (2 * den);
    (p.signum() * q) as i16
}

fn duration_error(what: impl Into<String>, expected: impl TryInto<u64>, found: impl TryInto<u64>) -> AssemblyError {
    AssemblyError::Duration {
        what: what.into(),
        expected: expected.try_into().unwrap_or(u64::MAX),
        found: found.try_into().unwrap_or(u64::MAX),
    }
}

/// Loops `motif` to `len` samples and fades out the last 100 ms.
pub fn fit_music(motif: &AudioTrack, len: usize) -> Result<AudioTrack, AssemblyError> {
    if motif.is_empty() {
        return Err(duration_error("music motif", len, 0u64));
    }
    let mut samples: Vec<i16> = (0..len).map(|n| motif.samples[n % motif.len()]).collect();
    let fade = FADE_OUT_SAMPLES.min(len);
    let tail = len - fade;
    for (j, s) in samples[tail..].iter_mut().enumerate() {
        *s = scale_sample(*s, (fade - 1 - j) as i64, fade as i64);
    }
    Ok(AudioTrack { sample_rate: motif.sample_rate, samples })
}

/// Music bed of exactly `duration_samples` samples.
pub fn generate_music(
    direction: &MusicDirection,
    duration_samples: usize,
    backend: &dyn MusicBackend,
) -> Result<AudioTrack, AssemblyError> {
    if duration_samples == 0 {
        return Err(AssemblyError::Precondition("music duration must be positive".into()));
    }
    let motif = backend.compose(direction, duration_samples as u64)?;
    if motif.sample_rate != SAMPLE_RATE {
        return Err(MediaError::RateMismatch { expected: SAMPLE_RATE, found: motif.sample_rate }.into());
    }
    let track = fit_music(&motif, duration_samples)?;
    if track.len() != duration_samples {
        return Err(duration_error("fitted music", duration_samples, track.len()));
    }
    Ok(track)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtitleEntry {
    /// 1-based.
    pub index: usize,
    /// Frames on the timeline the entry belongs to (scene or movie).
    pub frames: FrameRange,
    pub start_ms: u64,
    pub end_ms: u64,
    pub speaker: String,
    pub text: String,
}

/// A dialogue line ready for placement. `range` is within the scene.
#[derive(Debug, Clone, Copy)]
pub struct PlacedLine<'a> {
    pub range: FrameRange,
    pub speaker: &'a str,
    pub text: &'a str,
    pub audio: &'a AudioTrack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRender {
    pub scene_id: String,
    pub video: VideoClip,
    pub audio: AudioTrack,
    pub subtitles: Vec<SubtitleEntry>,
}

/// Mixes music and dialogue for one scene and builds its subtitles.
pub fn compose_scene(
    scene: &SceneSpec,
    video: VideoClip,
    lines: &[PlacedLine<'_>],
    music: &AudioTrack,
) -> Result<SceneRender, AssemblyError> {
    let fps = scene.fps;
    if video.fps != fps {
        return Err(MediaError::FpsMismatch { expected: fps, found: video.fps }.into());
    }
    if video.frame_count() != scene.frame_count as usize {
        return Err(duration_error(format!("frames of {}", scene.scene_id), scene.frame_count, video.frame_count()));
    }
    let len = scene_sample_count(scene.frame_count as u64, fps, SAMPLE_RATE) as usize;
    if music.len() != len {
        return Err(duration_error(format!("music of {}", scene.scene_id), len, music.len()));
    }
    if music.sample_rate != SAMPLE_RATE {
        return Err(MediaError::RateMismatch { expected: SAMPLE_RATE, found: music.sample_rate }.into());
    }

    let mut ducked = vec![false; len];
    let mut voices = Vec::with_capacity(lines.len());
    for line in lines {
        if line.range.is_empty() || line.range.end > scene.frame_count {
            return Err(duration_error(format!("dialogue range end in {}", scene.scene_id), scene.frame_count, line.range.end));
        }
        let span = frame_range_to_sample_range(line.range, fps, SAMPLE_RATE);
        if line.audio.len() as u64 > span.len() {
            return Err(duration_error(format!("voice line \"{}\"", line.text), span.len(), line.audio.len()));
        }
        let duck_end = (span.end + DUCK_RELEASE_SAMPLES).min(len as u64);
        ducked[span.start as usize..duck_end as usize].fill(true);
        voices.push(overlay_samples(&AudioTrack::silence(len), line.audio, span.start as usize, 1.0)?);
    }
    let bed = AudioTrack {
        sample_rate: SAMPLE_RATE,
        samples: music
            .samples
            .iter()
            .zip(&ducked)
            .map(|(&s, &d)| if d { scale_sample(s, DUCK_GAIN.0, DUCK_GAIN.1) } else { s })
            .collect(),
    };
    let mut inputs = vec![(&bed, 1.0)];
    inputs.extend(voices.iter().map(|v| (v, 1.0)));
    let audio = mix_tracks(&inputs, SAMPLE_RATE, len)?;

    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.sort_by_key(|&i| (lines[i].range.start, lines[i].range.end));
    let subtitles = order
        .into_iter()
        .enumerate()
        .map(|(n, i)| {
            let l = &lines[i];
            SubtitleEntry {
                index: n + 1,
                frames: l.range,
                start_ms: frame_to_millis(l.range.start as u64, fps),
                end_ms: frame_to_millis(l.range.end as u64, fps),
                speaker: l.speaker.to_string(),
                text: l.text.to_string(),
            }
        })
        .collect();
    Ok(SceneRender { scene_id: scene.scene_id.clone(), video, audio, subtitles })
}

/// `HH:MM:SS,mmm`.
pub fn srt_timecode(ms: u64) -> String {
    format!("{:02}:{:02}:{:02},{:03}", ms / 3_600_000, ms / 60_000 % 60, ms / 1000 % 60, ms % 1000)
}

pub fn format_srt(entries: &[SubtitleEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{}\n{} --> {}\n{}: {}\n\n",
            e.index,
            srt_timecode(e.start_ms),
            srt_timecode(e.end_ms),
            e.speaker,
            e.text
        ));
    }
    out
}

/// Moves scene-local entries onto the movie timeline.
fn shift_subtitles(entries: &[SubtitleEntry], frame_offset: u32, fps: u32, first_index: usize) -> Vec<SubtitleEntry> {
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let frames = FrameRange { start: e.frames.start + frame_offset, end: e.frames.end + frame_offset };
            SubtitleEntry {
                index: first_index + i,
                frames,
                start_ms: frame_to_millis(frames.start as u64, fps),
                end_ms: frame_to_millis(frames.end as u64, fps),
                speaker: e.speaker.clone(),
                text: e.text.clone(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Movie {
    pub video: VideoClip,
    pub audio: AudioTrack,
    pub subtitles: Vec<SubtitleEntry>,
}

/// Cuts scenes together in order.
pub fn assemble_movie(renders: &[SceneRender]) -> Result<Movie, AssemblyError> {
    let clips: Vec<VideoClip> = renders.iter().map(|r| r.video.clone()).collect();
    let video = concat_video(&clips)?;
    let tracks: Vec<AudioTrack> = renders.iter().map(|r| r.audio.clone()).collect();
    let audio = concat_audio(&tracks)?;
    let mut subtitles = Vec::new();
    let mut offset = 0u32;
    for r in renders {
        subtitles.extend(shift_subtitles(&r.subtitles, offset, video.fps, subtitles.len() + 1));
        offset += r.video.frame_count() as u32;
    }
    let expected = scene_sample_count(video.frame_count() as u64, video.fps, SAMPLE_RATE);
    if audio.len() as u64 != expected {
        return Err(duration_error("movie audio", expected, audio.len()));
    }
    Ok(Movie { video, audio, subtitles })
}

/// Reference to a file inside the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

/// A run of consecutive frame files. `sha256` covers their concatenation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesRef {
    pub dir: String,
    pub first: usize,
    pub count: usize,
    pub sha256: String,
}

/// Streams scene renders to `<movie_dir>/frames`, `audio.wav` and
/// `subtitles.srt` without holding the whole movie in memory. The output is
/// byte-identical to writing [`assemble_movie`]'s result.
pub struct MovieWriter {
    run_dir: PathBuf,
    rel_dir: String,
    format: Option<(u32, u32, u32)>,
    frames: usize,
    audio: Vec<i16>,
    subtitles: Vec<SubtitleEntry>,
    hasher: Sha256,
}

/// What one scene contributed to the movie.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenePlacement {
    pub frames: FramesRef,
    pub sample_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovieRecord {
    pub frames: FramesRef,
    pub audio: FileRef,
    pub subtitles: FileRef,
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub frame_count: usize,
    pub sample_count: u64,
    pub duration_ms: u64,
}

impl MovieWriter {
    /// `rel_dir` is the movie directory relative to `run_dir`.
    pub fn new(run_dir: &Path, rel_dir: &str) -> Result<Self, AssemblyError> {
        fs::create_dir_all(run_dir.join(rel_dir).join("frames"))?;
        Ok(MovieWriter {
            run_dir: run_dir.to_path_buf(),
            rel_dir: rel_dir.to_string(),
            format: None,
            frames: 0,
            audio: Vec::new(),
            subtitles: Vec::new(),
            hasher: Sha256::new(),
        })
    }

    pub fn push(&mut self, render: &SceneRender) -> Result<ScenePlacement, AssemblyError> {
        let v = &render.video;
        match self.format {
            None => self.format = Some((v.width, v.height, v.fps)),
            Some((w, h, fps)) => {
                if (v.width, v.height) != (w, h) {
                    return Err(MediaError::DimMismatch { expected: (w, h), found: (v.width, v.height) }.into());
                }
                if v.fps != fps {
                    return Err(MediaError::FpsMismatch { expected: fps, found: v.fps }.into());
                }
            }
        }
        if render.audio.sample_rate != SAMPLE_RATE {
            return Err(MediaError::RateMismatch { expected: SAMPLE_RATE, found: render.audio.sample_rate }.into());
        }
        let expected = scene_sample_count(v.frame_count() as u64, v.fps, SAMPLE_RATE);
        if render.audio.len() as u64 != expected {
            return Err(duration_error(format!("audio of {}", render.scene_id), expected, render.audio.len()));
        }
        let frames_dir = self.run_dir.join(&self.rel_dir).join("frames");
        let mut scene_hasher = Sha256::new();
        for (i, frame) in v.frames.iter().enumerate() {
            let bytes = encode_ppm(v.width, v.height, frame);
            scene_hasher.update(&bytes);
            self.hasher.update(&bytes);
            fs::write(frames_dir.join(frame_file_name(self.frames + i, "ppm")), &bytes)?;
        }
        let placement = ScenePlacement {
            frames: FramesRef {
                dir: format!("{}/frames", self.rel_dir),
                first: self.frames,
                count: v.frame_count(),
                sha256: hex::encode(scene_hasher.finalize()),
            },
            sample_count: expected,
        };
        let shifted = shift_subtitles(&render.subtitles, self.frames as u32, v.fps, self.subtitles.len() + 1);
        self.subtitles.extend(shifted);
        self.audio.extend_from_slice(&render.audio.samples);
        self.frames += v.frame_count();
        Ok(placement)
    }

    pub fn finish(self) -> Result<MovieRecord, AssemblyError> {
        let (width, height, fps) = self.format.ok_or(MediaError::EmptyList)?;
        let movie_dir = self.run_dir.join(&self.rel_dir);
        let audio = wav_bytes(&AudioTrack { sample_rate: SAMPLE_RATE, samples: self.audio });
        fs::write(movie_dir.join("audio.wav"), &audio)?;
        let srt = format_srt(&self.subtitles);
        fs::write(movie_dir.join("subtitles.srt"), srt.as_bytes())?;
        let sample_count = scene_sample_count(self.frames as u64, fps, SAMPLE_RATE);
        Ok(MovieRecord {
            frames: FramesRef {
                dir: format!("{}/frames", self.rel_dir),
                first: 0,
                count: self.frames,
                sha256: hex::encode(self.hasher.finalize()),
            },
            audio: FileRef { path: format!("{}/audio.wav", self.rel_dir), sha256: sha256_hex(&audio) },
            subtitles: FileRef { path: format!("{}/subtitles.srt", self.rel_dir), sha256: sha256_hex(srt.as_bytes()) },
            width,
            height,
            fps,
            frame_count: self.frames,
            sample_count,
            duration_ms: frame_to_millis(self.frames as u64, fps),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toggles {
    pub nsm: bool,
    pub qi: bool,
    pub dci: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub fps: u32,
    pub frames_per_scene: u32,
    pub width: u32,
    pub height: u32,
    pub max_repair_attempts: u32,
    pub relevance_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetRecord {
    pub character_id: String,
    pub kind: AssetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_index: Option<usize>,
    pub source_hash: String,
    pub file: FileRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub scene_id: String,
    pub frames: FramesRef,
    pub audio: FileRef,
    pub sample_count: u64,
    pub subtitle_count: usize,
    /// Present when character integration ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration: Option<IntegrationTrace>,
}

/// Reproducibility record of one run. All paths are relative to the run
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectManifest {
    pub engine_version: String,
    pub run_id: String,
    /// Seconds since the Unix epoch; the only field that differs between
    /// identical runs.
    pub created_unix: u64,
    pub story_hash: String,
    pub seed: u64,
    pub backends: BackendUris,
    pub toggles: Toggles,
    pub settings: RunSettings,
    pub blueprint: FileRef,
    pub violations: FileRef,
    pub repair_rounds: u32,
    pub assets: Vec<AssetRecord>,
    pub scenes: Vec<SceneRecord>,
    pub movie: MovieRecord,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl ProjectManifest {
    pub fn to_json(&self) -> String {
        to_canonical_string(self)
    }

    pub fn write(&self, run_dir: &Path) -> Result<PathBuf, AssemblyError> {
        let path = run_dir.join(MANIFEST_FILE);
        let mut f = fs::File::create(&path)?;
        f.write_all(self.to_json().as_bytes())?;
        f.write_all(b"\n")?;
        Ok(path)
    }

    pub fn read(run_dir: &Path) -> Result<Self, AssemblyError> {
        let path = run_dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|_| AssemblyError::Missing(MANIFEST_FILE.into()))?;
        serde_json::from_slice(&bytes).map_err(|e| AssemblyError::Corrupt(format!("{MANIFEST_FILE}: {e}")))
    }

    /// Copy with the timestamp cleared, for comparing runs.
    pub fn without_timestamp(&self) -> Self {
        ProjectManifest { created_unix: 0, ..self.clone() }
    }

    /// Every file reference in the manifest.
    pub fn files(&self) -> Vec<&FileRef> {
        let mut out = vec![&self.blueprint, &self.violations];
        out.extend(self.assets.iter().map(|a| &a.file));
        out.extend(self.scenes.iter().map(|s| &s.audio));
        out.extend([&self.movie.audio, &self.movie.subtitles]);
        out
    }

    /// Every frame run in the manifest.
    pub fn frame_runs(&self) -> Vec<&FramesRef> {
        let mut out: Vec<&FramesRef> = self.scenes.iter().map(|s| &s.frames).collect();
        out.push(&self.movie.frames);
        out
    }
}

/// Resolves a manifest path, refusing anything that leaves the run
/// directory.
fn resolve(run_dir: &Path, rel: &str) -> Result<PathBuf, AssemblyError> {
    let p = Path::new(rel);
    if p.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(AssemblyError::Corrupt(format!("{rel}: path escapes the run directory")));
    }
    Ok(run_dir.join(p))
}

pub fn verify_file(run_dir: &Path, file: &FileRef) -> Result<(), AssemblyError> {
    let path = resolve(run_dir, &file.path)?;
    let bytes = fs::read(&path).map_err(|_| AssemblyError::Missing(file.path.clone()))?;
    if sha256_hex(&bytes) != file.sha256 {
        return Err(AssemblyError::Corrupt(file.path.clone()));
    }
    Ok(())
}

pub fn verify_frames(run_dir: &Path, frames: &FramesRef) -> Result<(), AssemblyError> {
    let dir = resolve(run_dir, &frames.dir)?;
    let mut hasher = Sha256::new();
    for i in frames.first..frames.first + frames.count {
        let name = frame_file_name(i, "ppm");
        let bytes = fs::read(dir.join(&name)).map_err(|_| AssemblyError::Missing(format!("{}/{name}", frames.dir)))?;
        hasher.update(&bytes);
    }
    if hex::encode(hasher.finalize()) != frames.sha256 {
        return Err(AssemblyError::Corrupt(format!("{} [{}, {})", frames.dir, frames.first, frames.first + frames.count)));
    }
    Ok(())
}

/// Reads the manifest in `run_dir` and checks that every referenced file
/// exists and matches its hash.
pub fn verify_manifest(run_dir: &Path) -> Result<ProjectManifest, AssemblyError> {
    let manifest = ProjectManifest::read(run_dir)?;
    for f in manifest.files() {
        verify_file(run_dir, f)?;
    }
    for r in manifest.frame_runs() {
        verify_frames(run_dir, r)?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::blueprint::fixtures::scene;
    use crate::media::read_frames_dir;

    fn direction(intensity: f64) -> MusicDirection {
        MusicDirection { mood: "warm".into(), intensity, motif_seed: 11 }
    }

    #[test]
    fn scaling_rounds_half_away_from_zero() {
        assert_eq!(scale_sample(5, 3, 10), 2);
        assert_eq!(scale_sample(-5, 3, 10), -2);
        assert_eq!(scale_sample(4, 3, 10), 1);
        assert_eq!(scale_sample(i16::MIN, 1599, 1600), -32748);
    }

    #[test]
    fn zero_intensity_music_is_silent() {
        let t = generate_music(&direction(0.0), 86000, &MockBackend::new(1)).unwrap();
        assert_eq!(t.len(), 86000);
        assert!(t.samples.iter().all(|&s| s == 0));
    }

    #[test]
    fn fade_window_ramps_to_zero() {
        let motif = AudioTrack::new(vec![10000; 32000]);
        let t = fit_music(&motif, 86000).unwrap();
        assert_eq!(t.len(), 86000);
        assert_eq!(t.samples[86000 - 1601], 10000);
        for j in 0..1600 {
            // Oracle: gain (1599 - j) / 1600, computed in integer arithmetic.
            let exact = 10000 * (1599 - j as i64);
            let expected = (exact + 800) / 1600;
            assert_eq!(t.samples[86000 - 1600 + j] as i64, expected, "sample {j}");
        }
        assert_eq!(*t.samples.last().unwrap(), 0);
    }

    #[test]
    fn loop_repeats_the_motif() {
        let motif = AudioTrack::new((0..100).collect());
        let t = fit_music(&motif, 5000).unwrap();
        assert_eq!(t.samples[250], 50);
        assert_eq!(t.samples[3399], 99);
        assert_eq!(fit_music(&AudioTrack::new(vec![]), 10).unwrap_err().code(), "E_DURATION");
    }

    #[test]
    fn same_motif_seed_same_track() {
        let m = MockBackend::new(3);
        assert_eq!(generate_music(&direction(0.5), 86000, &m).unwrap(), generate_music(&direction(0.5), 86000, &m).unwrap());
        assert_eq!(generate_music(&direction(0.5), 0, &m).unwrap_err().code(), "E_PRECONDITION");
    }

    fn scene129() -> SceneSpec {
        scene("s1", &["ava"])
    }

    fn video(n: usize) -> VideoClip {
        VideoClip::filled(4, 4, 24, n, [9, 9, 9])
    }

    #[test]
    fn no_dialogue_keeps_the_music() {
        let music = generate_music(&direction(0.6), 86000, &MockBackend::new(1)).unwrap();
        let r = compose_scene(&scene129(), video(129), &[], &music).unwrap();
        assert_eq!(r.audio, music);
        assert!(r.subtitles.is_empty());
    }

    #[test]
    fn ducking_window_follows_the_line() {
        let music = AudioTrack::new(vec![1000; 86000]);
        let voice = AudioTrack::new(vec![0; 16000]);
        let line = PlacedLine { range: FrameRange { start: 24, end: 48 }, speaker: "Ava", text: "Hello there", audio: &voice };
        let r = compose_scene(&scene129(), video(129), &[line], &music).unwrap();
        for (n, &s) in r.audio.samples.iter().enumerate() {
            let expected = if (16000..36000).contains(&n) { 300 } else { 1000 };
            assert_eq!(s, expected, "sample {n}");
        }
        // Voice overlaid at the start sample.
        let loud = AudioTrack::new(vec![5000; 10]);
        let line = PlacedLine { audio: &loud, ..line };
        let r = compose_scene(&scene129(), video(129), &[line], &music).unwrap();
        assert_eq!(r.audio.samples[15999], 1000);
        assert_eq!(r.audio.samples[16000], 5300);
        assert_eq!(r.audio.samples[16010], 300);
    }

    #[test]
    fn subtitle_timecodes_come_from_frames() {
        let music = AudioTrack::new(vec![0; 86000]);
        let voice = AudioTrack::new(vec![]);
        let line = PlacedLine { range: FrameRange { start: 24, end: 48 }, speaker: "Ava", text: "Hello there", audio: &voice };
        let r = compose_scene(&scene129(), video(129), &[line], &music).unwrap();
        assert_eq!(format_srt(&r.subtitles), "1\n00:00:01,000 --> 00:00:02,000\nAva: Hello there\n\n");
        assert_eq!(srt_timecode(3_723_004), "01:02:03,004");
    }

    #[test]
    fn compose_rejects_inconsistent_lengths() {
        let music = AudioTrack::new(vec![0; 85999]);
        assert_eq!(compose_scene(&scene129(), video(129), &[], &music).unwrap_err().code(), "E_DURATION");
        let music = AudioTrack::new(vec![0; 86000]);
        assert_eq!(compose_scene(&scene129(), video(128), &[], &music).unwrap_err().code(), "E_DURATION");
        let long = AudioTrack::new(vec![1; 16001]);
        let line = PlacedLine { range: FrameRange { start: 24, end: 48 }, speaker: "A", text: "x", audio: &long };
        assert_eq!(compose_scene(&scene129(), video(129), &[line], &music).unwrap_err().code(), "E_DURATION");
    }

    fn render(id: &str, shade: u8, lines: &[(u32, u32, &str)]) -> SceneRender {
        let music = AudioTrack::new(vec![shade as i16; 86000]);
        let voice = AudioTrack::new(vec![]);
        let placed: Vec<PlacedLine> = lines
            .iter()
            .map(|&(s, e, t)| PlacedLine { range: FrameRange { start: s, end: e }, speaker: "Ava", text: t, audio: &voice })
            .collect();
        let sc = scene(id, &["ava"]);
        compose_scene(&sc, VideoClip::filled(4, 4, 24, 129, [shade; 3]), &placed, &music).unwrap()
    }

    #[test]
    fn three_scenes_add_up() {
        let renders = vec![render("a", 1, &[(0, 10, "one")]), render("b", 2, &[(24, 48, "two")]), render("c", 3, &[])];
        let movie = assemble_movie(&renders).unwrap();
        assert_eq!(movie.video.frame_count(), 387);
        assert_eq!(movie.audio.len(), 258000);
        assert_eq!(frame_to_millis(387, 24), 16125);
        assert_eq!(movie.subtitles.len(), 2);
        assert_eq!(movie.subtitles[1].index, 2);
        assert_eq!(movie.subtitles[1].start_ms, 6375);
    }

    #[test]
    fn single_scene_movie_is_the_scene() {
        let r = render("a", 4, &[(3, 9, "hi")]);
        let movie = assemble_movie(std::slice::from_ref(&r)).unwrap();
        assert_eq!((movie.video, movie.audio, movie.subtitles), (r.video, r.audio, r.subtitles));
    }

    #[test]
    fn assembly_checks_inputs() {
        assert_eq!(assemble_movie(&[]).unwrap_err().code(), "E_EMPTY_LIST");
        let a = render("a", 1, &[]);
        let mut b = render("b", 1, &[]);
        b.video.fps = 25;
        assert_eq!(assemble_movie(&[a, b]).unwrap_err().code(), "E_FPS_MISMATCH");
    }

    #[test]
    fn writer_matches_in_memory_assembly() {
        let dir = tempfile::tempdir().unwrap();
        let renders = vec![render("a", 1, &[(0, 10, "one")]), render("b", 2, &[(24, 48, "two")])];
        let movie = assemble_movie(&renders).unwrap();
        let mut w = MovieWriter::new(dir.path(), "movie").unwrap();
        let placements: Vec<ScenePlacement> = renders.iter().map(|r| w.push(r).unwrap()).collect();
        let record = w.finish().unwrap();
        assert_eq!(placements[1].frames.first, 129);
        assert_eq!(read_frames_dir(&dir.path().join("movie/frames"), 258, 24).unwrap(), movie.video);
        assert_eq!(fs::read(dir.path().join("movie/audio.wav")).unwrap(), wav_bytes(&movie.audio));
        assert_eq!(fs::read_to_string(dir.path().join("movie/subtitles.srt")).unwrap(), format_srt(&movie.subtitles));
        assert_eq!(record.frames.sha256, crate::media::clip_digest(&movie.video));
        assert_eq!((record.frame_count, record.sample_count, record.duration_ms), (258, 172000, 10750));
        for p in &placements {
            verify_frames(dir.path(), &p.frames).unwrap();
        }
        verify_frames(dir.path(), &record.frames).unwrap();
        verify_file(dir.path(), &record.audio).unwrap();
    }

    #[test]
    fn verification_flags_missing_and_tampered_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x.txt"), b"abc").unwrap();
        let good = FileRef { path: "x.txt".into(), sha256: sha256_hex(b"abc") };
        verify_file(dir.path(), &good).unwrap();
        let bad = FileRef { sha256: sha256_hex(b"abd"), ..good.clone() };
        assert_eq!(verify_file(dir.path(), &bad).unwrap_err().code(), "E_CORRUPT");
        let gone = FileRef { path: "y.txt".into(), ..good.clone() };
        assert_eq!(verify_file(dir.path(), &gone).unwrap_err().code(), "E_MISSING");
        let escape = FileRef { path: "../x.txt".into(), ..good };
        assert_eq!(verify_file(dir.path(), &escape).unwrap_err().code(), "E_CORRUPT");
    }
}
