//! Client side of the wire protocol: drives an adapter process over its
//! standard streams.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::Value;

use super::wire::{
    self, ClipRef, FaceSwapPayload, Handshake, LipSyncPayload, MediaOutput, MusicPayload, PortraitPayload,
    SegmentationPayload, TtsPayload, VideoPayload,
};
use super::{
    BackendError, BackendKind, BackendRequest, BackendResponse, FaceSwapBackend, LipSyncBackend, MusicBackend,
    PortraitBackend, SceneVideoRequest, SegmentationBackend, TextBackend, TtsBackend, VideoBackend,
};
use crate::blueprint::{CharacterProfile, MusicDirection, VoiceSpec};
use crate::media::{self, AudioTrack, FrameRange, MaskSequence, MediaError, Raster, VideoClip};

struct Connection {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

/// One adapter process. Requests are serialized through a lock, so a
/// handle may be shared, but responses are always answered in order.
pub struct SubprocessBackend {
    conn: Mutex<Connection>,
    work_dir: PathBuf,
    handshake: Handshake,
    scratch_seq: AtomicU64,
}

fn media_err(e: MediaError) -> BackendError {
    BackendError::Protocol(format!("adapter media: {e}"))
}

impl SubprocessBackend {
    /// Launches `program <work_dir> [args...]` and performs the handshake.
    pub fn spawn(program: &Path, args: &[String], work_dir: &Path) -> Result<Self, BackendError> {
        fs::create_dir_all(work_dir)?;
        let work_dir = work_dir.canonicalize()?;
        let mut child = Command::new(program)
            .arg(&work_dir)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Transport(format!("cannot launch {}: {e}", program.display())))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let conn = Connection { child, stdin, stdout, next_id: 0 };
        let mut backend = SubprocessBackend {
            conn: Mutex::new(conn),
            work_dir,
            handshake: Handshake { version: 0, kinds: vec![] },
            scratch_seq: AtomicU64::new(0),
        };
        let payload = backend.round_trip(wire::HANDSHAKE, serde_json::json!({"version": wire::PROTOCOL_VERSION}))?.1;
        let hs: Handshake = serde_json::from_value(payload)
            .map_err(|e| BackendError::Protocol(format!("bad handshake: {e}")))?;
        if hs.version != wire::PROTOCOL_VERSION {
            return Err(BackendError::Protocol(format!("adapter speaks protocol version {}", hs.version)));
        }
        backend.handshake = hs;
        Ok(backend)
    }

    pub fn kinds(&self) -> &[BackendKind] {
        &self.handshake.kinds
    }

    pub fn require(&self, kind: BackendKind) -> Result<(), BackendError> {
        if self.handshake.kinds.contains(&kind) {
            Ok(())
        } else {
            Err(BackendError::Protocol(format!("adapter does not serve kind {}", kind.as_str())))
        }
    }

    fn exchange(&self, kind: &str, payload: Value) -> Result<(u64, BackendResponse), BackendError> {
        let mut conn = self.conn.lock().map_err(|_| BackendError::Transport("connection poisoned".into()))?;
        let id = conn.next_id;
        conn.next_id += 1;
        let line = wire::to_line(&BackendRequest { id, kind: kind.to_string(), payload });
        let stdin = conn.stdin.as_mut().ok_or_else(|| BackendError::Transport("stdin closed".into()))?;
        writeln!(stdin, "{line}")?;
        stdin.flush()?;
        let mut reply = String::new();
        if conn.stdout.read_line(&mut reply)? == 0 {
            return Err(BackendError::Transport("adapter closed its output".into()));
        }
        let response: BackendResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| BackendError::Protocol(format!("malformed response line: {e}")))?;
        Ok((id, response))
    }

    fn round_trip(&self, kind: &str, payload: Value) -> Result<(u64, Value), BackendError> {
        let (id, response) = self.exchange(kind, payload)?;
        Ok((id, response.into_payload(id)?))
    }

    /// Runs one media request in its own scratch directory, removed
    /// afterwards.
    fn with_scratch<T>(
        &self,
        kind: BackendKind,
        build: impl FnOnce(&str, &Path) -> Result<Value, BackendError>,
        read: impl FnOnce(&Path) -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let tag = format!("req_{:08}", self.scratch_seq.fetch_add(1, Ordering::Relaxed));
        let scratch = self.work_dir.join(&tag);
        fs::create_dir_all(&scratch)?;
        let result = (|| {
            let payload = build(&tag, &scratch)?;
            let (_, reply) = self.round_trip(kind.as_str(), payload)?;
            let out: MediaOutput = serde_json::from_value(reply)
                .map_err(|e| BackendError::Protocol(format!("bad media reply: {e}")))?;
            let path = Path::new(&out.path);
            if path.is_absolute() || path.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                return Err(BackendError::Protocol(format!("reply path {:?} escapes work dir", out.path)));
            }
            read(&self.work_dir.join(path))
        })();
        let _ = fs::remove_dir_all(&scratch);
        result
    }

    fn write_clip(scratch: &Path, tag: &str, name: &str, clip: &VideoClip) -> Result<ClipRef, BackendError> {
        media::write_frames_dir(&scratch.join(name), clip).map_err(media_err)?;
        Ok(ClipRef { dir: format!("{tag}/{name}"), frame_count: clip.frame_count(), fps: clip.fps })
    }
}

impl Drop for SubprocessBackend {
    fn drop(&mut self) {
        if let Ok(conn) = self.conn.get_mut() {
            conn.stdin.take();
            let _ = conn.child.wait();
        }
    }
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("payload serializes")
}

impl TextBackend for SubprocessBackend {
    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let (id, mut response) = self.exchange(&request.kind, request.payload.clone())?;
        if response.id != id {
            return Err(BackendError::Protocol(format!("response id {} for request {id}", response.id)));
        }
        response.id = request.id;
        Ok(response)
    }
}

impl VideoBackend for SubprocessBackend {
    fn render_scene(&self, request: &SceneVideoRequest) -> Result<VideoClip, BackendError> {
        self.with_scratch(
            BackendKind::Video,
            |tag, _| Ok(to_value(VideoPayload { request: request.clone(), out_dir: format!("{tag}/out") })),
            |path| media::read_frames_dir(path, request.frame_count as usize, request.fps).map_err(media_err),
        )
    }
}

impl PortraitBackend for SubprocessBackend {
    fn portrait(&self, profile: &CharacterProfile, seed: u64) -> Result<Raster, BackendError> {
        self.with_scratch(
            BackendKind::Portrait,
            |tag, _| Ok(to_value(PortraitPayload { profile: profile.clone(), seed, out: format!("{tag}/portrait.ppm") })),
            |path| {
                let (width, height, data) = media::decode_ppm(&fs::read(path)?).map_err(media_err)?;
                Ok(Raster { width, height, data })
            },
        )
    }
}

impl TtsBackend for SubprocessBackend {
    fn synthesize(&self, voice: &VoiceSpec, text: &str, emotion: &str) -> Result<AudioTrack, BackendError> {
        self.with_scratch(
            BackendKind::Tts,
            |tag, _| {
                Ok(to_value(TtsPayload {
                    voice_spec: voice.clone(),
                    text: text.to_string(),
                    emotion: emotion.to_string(),
                    out: format!("{tag}/voice.wav"),
                }))
            },
            |path| media::read_wav(path).map_err(media_err),
        )
    }
}

impl SegmentationBackend for SubprocessBackend {
    fn segment(&self, clip: &VideoClip, character_id: &str, keyword: &str) -> Result<MaskSequence, BackendError> {
        self.with_scratch(
            BackendKind::Segmentation,
            |tag, scratch| {
                let clip_ref = Self::write_clip(scratch, tag, "clip", clip)?;
                Ok(to_value(SegmentationPayload {
                    clip: clip_ref,
                    character_id: character_id.to_string(),
                    keyword: keyword.to_string(),
                    out_dir: format!("{tag}/masks"),
                }))
            },
            |path| media::read_mask_dir(path, clip.frame_count()).map_err(media_err),
        )
    }
}

impl FaceSwapBackend for SubprocessBackend {
    fn swap(&self, clip: &VideoClip, masks: &MaskSequence, portrait: &Raster) -> Result<VideoClip, BackendError> {
        self.with_scratch(
            BackendKind::Faceswap,
            |tag, scratch| {
                let clip_ref = Self::write_clip(scratch, tag, "clip", clip)?;
                media::write_mask_dir(&scratch.join("masks"), masks).map_err(media_err)?;
                fs::write(scratch.join("portrait.ppm"), media::encode_ppm(portrait.width, portrait.height, &portrait.data))?;
                Ok(to_value(FaceSwapPayload {
                    clip: clip_ref,
                    masks_dir: format!("{tag}/masks"),
                    portrait: format!("{tag}/portrait.ppm"),
                    out_dir: format!("{tag}/out"),
                }))
            },
            |path| media::read_frames_dir(path, clip.frame_count(), clip.fps).map_err(media_err),
        )
    }
}

impl LipSyncBackend for SubprocessBackend {
    fn lipsync(
        &self,
        clip: &VideoClip,
        masks: &MaskSequence,
        audio: &AudioTrack,
        range: FrameRange,
    ) -> Result<VideoClip, BackendError> {
        self.with_scratch(
            BackendKind::Lipsync,
            |tag, scratch| {
                let clip_ref = Self::write_clip(scratch, tag, "clip", clip)?;
                media::write_mask_dir(&scratch.join("masks"), masks).map_err(media_err)?;
                media::write_wav(&scratch.join("voice.wav"), audio).map_err(media_err)?;
                Ok(to_value(LipSyncPayload {
                    clip: clip_ref,
                    masks_dir: format!("{tag}/masks"),
                    audio: format!("{tag}/voice.wav"),
                    frame_range: range,
                    out_dir: format!("{tag}/out"),
                }))
            },
            |path| media::read_frames_dir(path, clip.frame_count(), clip.fps).map_err(media_err),
        )
    }
}

impl MusicBackend for SubprocessBackend {
    fn compose(&self, direction: &MusicDirection, duration_samples: u64) -> Result<AudioTrack, BackendError> {
        self.with_scratch(
            BackendKind::Music,
            |tag, _| {
                Ok(to_value(MusicPayload {
                    direction: direction.clone(),
                    duration_samples,
                    out: format!("{tag}/music.wav"),
                }))
            },
            |path| media::read_wav(path).map_err(media_err),
        )
    }
}
