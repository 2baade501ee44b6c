//! NDJSON wire protocol between the engine and out-of-process adapters.
//!
//! One canonical JSON object per line. Requests are `{id, kind, payload}`,
//! responses `{id, ok, payload}` or `{id, ok:false, error:{code, message}}`.
//! Media never travels inline: payloads name files inside the shared work
//! directory, relative to it, in the on-disk formats of [`crate::media`].
//! The first exchange is a `handshake` declaring the protocol version and
//! supported kinds.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, BackendKind, Backends, SceneVideoRequest};
use crate::blueprint::{CharacterProfile, MusicDirection, VoiceSpec};
use crate::canonical;
use crate::media::{self, FrameRange, MediaError, Raster};

pub const PROTOCOL_VERSION: u32 = 1;
pub const HANDSHAKE: &str = "handshake";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub id: u64,
    pub kind: String,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl BackendResponse {
    pub fn success(id: u64, payload: Value) -> Self {
        BackendResponse { id, ok: true, payload: Some(payload), error: None }
    }

    pub fn failure(id: u64, code: &str, message: impl Into<String>) -> Self {
        BackendResponse {
            id,
            ok: false,
            payload: None,
            error: Some(WireError { code: code.to_string(), message: message.into() }),
        }
    }

    /// Checks the id and unwraps a successful payload.
    pub fn into_payload(self, expected_id: u64) -> Result<Value, BackendError> {
        if self.id != expected_id {
            return Err(BackendError::Protocol(format!(
                "response id {} does not match request id {expected_id}",
                self.id
            )));
        }
        match (self.ok, self.payload, self.error) {
            (true, Some(payload), _) => Ok(payload),
            (true, None, _) => Err(BackendError::Protocol("ok response without payload".into())),
            (false, _, Some(e)) => Err(BackendError::Remote { code: e.code, message: e.message }),
            (false, _, None) => Err(BackendError::Protocol("error response without error object".into())),
        }
    }
}

pub fn to_line<T: Serialize>(message: &T) -> String {
    canonical::to_canonical_string(message)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub version: u32,
    pub kinds: Vec<BackendKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoPayload {
    #[serde(flatten)]
    pub request: SceneVideoRequest,
    pub out_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortraitPayload {
    pub profile: CharacterProfile,
    pub seed: u64,
    pub out: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TtsPayload {
    pub voice_spec: VoiceSpec,
    pub text: String,
    pub emotion: String,
    pub out: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipRef {
    pub dir: String,
    pub frame_count: usize,
    pub fps: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationPayload {
    pub clip: ClipRef,
    pub character_id: String,
    pub keyword: String,
    pub out_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaceSwapPayload {
    pub clip: ClipRef,
    pub masks_dir: String,
    pub portrait: String,
    pub out_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipSyncPayload {
    pub clip: ClipRef,
    pub masks_dir: String,
    pub audio: String,
    pub frame_range: FrameRange,
    pub out_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MusicPayload {
    pub direction: MusicDirection,
    pub duration_samples: u64,
    pub out: String,
}

/// Output location reported back by media kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaOutput {
    pub path: String,
}

enum ServeError {
    Kind(String),
    Payload(String),
    Io(String),
    Backend(BackendError),
}

impl From<MediaError> for ServeError {
    fn from(e: MediaError) -> Self {
        match e {
            MediaError::Io(m) => ServeError::Io(m),
            other => ServeError::Payload(other.to_string()),
        }
    }
}

impl From<std::io::Error> for ServeError {
    fn from(e: std::io::Error) -> Self {
        ServeError::Io(e.to_string())
    }
}

impl From<BackendError> for ServeError {
    fn from(e: BackendError) -> Self {
        ServeError::Backend(e)
    }
}

fn decode<T: DeserializeOwned>(payload: &Value) -> Result<T, ServeError> {
    serde_json::from_value(payload.clone()).map_err(|e| ServeError::Payload(e.to_string()))
}

/// Resolves a payload path inside the work directory, refusing escapes.
fn inside(work_dir: &Path, rel: &str) -> Result<PathBuf, ServeError> {
    let rel_path = Path::new(rel);
    if rel_path.is_absolute() || rel_path.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(ServeError::Io(format!("path {rel:?} escapes the work directory")));
    }
    Ok(work_dir.join(rel_path))
}

/// Answers one request against `backends`, reading and writing media in
/// `work_dir`.
pub fn handle_request(request: &BackendRequest, backends: &Backends, work_dir: &Path) -> BackendResponse {
    match dispatch(request, backends, work_dir) {
        Ok(payload) => BackendResponse::success(request.id, payload),
        Err(ServeError::Kind(m)) => BackendResponse::failure(request.id, "E_KIND", m),
        Err(ServeError::Payload(m)) => BackendResponse::failure(request.id, "E_PAYLOAD", m),
        Err(ServeError::Io(m)) => BackendResponse::failure(request.id, "E_IO", m),
        Err(ServeError::Backend(e)) => BackendResponse::failure(request.id, "E_BACKEND", e.to_string()),
    }
}

fn dispatch(request: &BackendRequest, backends: &Backends, work_dir: &Path) -> Result<Value, ServeError> {
    if request.kind == HANDSHAKE {
        let hs = Handshake { version: PROTOCOL_VERSION, kinds: BackendKind::ALL.to_vec() };
        return Ok(serde_json::to_value(hs).expect("handshake serializes"));
    }
    let kind = BackendKind::parse(&request.kind)
        .ok_or_else(|| ServeError::Kind(format!("unsupported kind {:?}", request.kind)))?;
    let p = &request.payload;
    match kind {
        BackendKind::Text => {
            let response = backends.text.call(request)?;
            response.into_payload(request.id).map_err(ServeError::Backend)
        }
        BackendKind::Video => {
            let req: VideoPayload = decode(p)?;
            let clip = backends.video.render_scene(&req.request)?;
            media::write_frames_dir(&inside(work_dir, &req.out_dir)?, &clip)?;
            Ok(json!(MediaOutput { path: req.out_dir }))
        }
        BackendKind::Portrait => {
            let req: PortraitPayload = decode(p)?;
            let image = backends.portrait.portrait(&req.profile, req.seed)?;
            write_file(&inside(work_dir, &req.out)?, &media::encode_ppm(image.width, image.height, &image.data))?;
            Ok(json!(MediaOutput { path: req.out }))
        }
        BackendKind::Tts => {
            let req: TtsPayload = decode(p)?;
            let audio = backends.tts.synthesize(&req.voice_spec, &req.text, &req.emotion)?;
            write_file(&inside(work_dir, &req.out)?, &media::wav_bytes(&audio))?;
            Ok(json!(MediaOutput { path: req.out }))
        }
        BackendKind::Segmentation => {
            let req: SegmentationPayload = decode(p)?;
            let clip = read_clip(work_dir, &req.clip)?;
            let masks = backends.segmentation.segment(&clip, &req.character_id, &req.keyword)?;
            media::write_mask_dir(&inside(work_dir, &req.out_dir)?, &masks)?;
            Ok(json!(MediaOutput { path: req.out_dir }))
        }
        BackendKind::Faceswap => {
            let req: FaceSwapPayload = decode(p)?;
            let clip = read_clip(work_dir, &req.clip)?;
            let masks = media::read_mask_dir(&inside(work_dir, &req.masks_dir)?, req.clip.frame_count)?;
            let (w, h, data) = media::decode_ppm(&std::fs::read(inside(work_dir, &req.portrait)?)?)?;
            let out = backends.faceswap.swap(&clip, &masks, &Raster { width: w, height: h, data })?;
            media::write_frames_dir(&inside(work_dir, &req.out_dir)?, &out)?;
            Ok(json!(MediaOutput { path: req.out_dir }))
        }
        BackendKind::Lipsync => {
            let req: LipSyncPayload = decode(p)?;
            let clip = read_clip(work_dir, &req.clip)?;
            let masks = media::read_mask_dir(&inside(work_dir, &req.masks_dir)?, req.clip.frame_count)?;
            let audio = media::read_wav(&inside(work_dir, &req.audio)?)?;
            let out = backends.lipsync.lipsync(&clip, &masks, &audio, req.frame_range)?;
            media::write_frames_dir(&inside(work_dir, &req.out_dir)?, &out)?;
            Ok(json!(MediaOutput { path: req.out_dir }))
        }
        BackendKind::Music => {
            let req: MusicPayload = decode(p)?;
            let track = backends.music.compose(&req.direction, req.duration_samples)?;
            write_file(&inside(work_dir, &req.out)?, &media::wav_bytes(&track))?;
            Ok(json!(MediaOutput { path: req.out }))
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ServeError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_clip(work_dir: &Path, clip: &ClipRef) -> Result<media::VideoClip, ServeError> {
    Ok(media::read_frames_dir(&inside(work_dir, &clip.dir)?, clip.frame_count, clip.fps)?)
}

/// Serves requests line by line until end of input. Malformed lines get an
/// `E_PAYLOAD` response with id 0.
pub fn serve<R: BufRead, W: Write>(input: R, mut output: W, backends: &Backends, work_dir: &Path) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<BackendRequest>(&line) {
            Ok(request) => handle_request(&request, backends, work_dir),
            Err(e) => BackendResponse::failure(0, "E_PAYLOAD", format!("malformed request: {e}")),
        };
        writeln!(output, "{}", to_line(&response))?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(lines: &[Value]) -> Vec<BackendResponse> {
        let dir = tempfile::tempdir().unwrap();
        let input: String = lines.iter().map(|l| format!("{}\n", to_line(l))).collect();
        let mut out = Vec::new();
        serve(input.as_bytes(), &mut out, &Backends::mock(7), dir.path()).unwrap();
        String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }

    #[test]
    fn handshake_declares_version_and_kinds() {
        let r = run(&[json!({"id": 0, "kind": "handshake", "payload": {"version": 1}})]);
        let hs: Handshake = serde_json::from_value(r[0].payload.clone().unwrap()).unwrap();
        assert_eq!(hs.version, 1);
        assert_eq!(hs.kinds.len(), 8);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let r = run(&[json!({"id": 4, "kind": "hologram", "payload": {}})]);
        assert_eq!(r[0].id, 4);
        assert!(!r[0].ok);
        assert_eq!(r[0].error.as_ref().unwrap().code, "E_KIND");
    }

    #[test]
    fn bad_payload_and_escaping_paths() {
        let r = run(&[
            json!({"id": 1, "kind": "music", "payload": {"nope": 1}}),
            json!({"id": 2, "kind": "music", "payload": {
                "direction": {"mood": "calm", "intensity": 0.5, "motif_seed": 1},
                "duration_samples": 100, "out": "../escape.wav"}}),
        ]);
        assert_eq!(r[0].error.as_ref().unwrap().code, "E_PAYLOAD");
        assert_eq!(r[1].error.as_ref().unwrap().code, "E_IO");
    }

    #[test]
    fn one_response_per_request_in_order() {
        let reqs: Vec<Value> = (1..=100)
            .map(|i| json!({"id": i, "kind": if i % 2 == 0 { "handshake" } else { "hologram" }, "payload": {}}))
            .collect();
        let r = run(&reqs);
        assert_eq!(r.len(), 100);
        assert!(r.iter().enumerate().all(|(i, resp)| resp.id == i as u64 + 1));
    }

    #[test]
    fn id_mismatch_is_a_protocol_error() {
        let resp = BackendResponse::success(3, json!({}));
        assert!(matches!(resp.into_payload(4), Err(BackendError::Protocol(_))));
        let resp = BackendResponse::failure(3, "E_KIND", "x");
        assert!(matches!(resp.into_payload(3), Err(BackendError::Remote { .. })));
    }
}
