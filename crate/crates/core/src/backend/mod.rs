//! Pluggable model backends.
//!
//! Every generative model sits behind one trait per kind. Two
//! implementations ship with the engine: [`MockBackend`], a deterministic
//! in-process double, and [`SubprocessBackend`], which speaks the NDJSON wire
//! protocol to an external adapter. Backends are selected by URI:
//! `mock:<seed>[?fault=<flag>,...]` or `subprocess:<path> [args...]`.

pub mod mock;
mod subprocess;
pub mod wire;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blueprint::{CharacterProfile, MusicDirection, VoiceSpec};
use crate::media::{AudioTrack, FrameRange, MaskSequence, Raster, VideoClip};

pub use mock::{MockBackend, MockFault};
pub use subprocess::SubprocessBackend;
pub use wire::{BackendRequest, BackendResponse, WireError, PROTOCOL_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("E_BACKEND: transport failure: {0}")]
    Transport(String),
    #[error("E_BACKEND: protocol violation: {0}")]
    Protocol(String),
    #[error("E_BACKEND: remote error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("E_BACKEND: invalid backend uri {0:?}")]
    BadUri(String),
}

impl From<std::io::Error> for BackendError {
    fn from(err: std::io::Error) -> Self {
        BackendError::Transport(err.to_string())
    }
}

/// The model kinds the engine talks to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Text,
    Video,
    Portrait,
    Tts,
    Segmentation,
    Faceswap,
    Lipsync,
    Music,
}

impl BackendKind {
    pub const ALL: [BackendKind; 8] = [
        BackendKind::Text,
        BackendKind::Video,
        BackendKind::Portrait,
        BackendKind::Tts,
        BackendKind::Segmentation,
        BackendKind::Faceswap,
        BackendKind::Lipsync,
        BackendKind::Music,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Text => "text",
            BackendKind::Video => "video",
            BackendKind::Portrait => "portrait",
            BackendKind::Tts => "tts",
            BackendKind::Segmentation => "segmentation",
            BackendKind::Faceswap => "faceswap",
            BackendKind::Lipsync => "lipsync",
            BackendKind::Music => "music",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        BackendKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Language-model backend. Payloads are JSON; the agent layer owns their
/// shape.
pub trait TextBackend: Send + Sync {
    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

/// Text-to-video scene generation request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneVideoRequest {
    pub scene_id: String,
    pub prompt: String,
    pub frame_count: u32,
    pub fps: u32,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

pub trait VideoBackend: Send + Sync {
    fn render_scene(&self, request: &SceneVideoRequest) -> Result<VideoClip, BackendError>;
}

pub trait PortraitBackend: Send + Sync {
    fn portrait(&self, profile: &CharacterProfile, seed: u64) -> Result<Raster, BackendError>;
}

pub trait TtsBackend: Send + Sync {
    fn synthesize(&self, voice: &VoiceSpec, text: &str, emotion: &str) -> Result<AudioTrack, BackendError>;
}

pub trait SegmentationBackend: Send + Sync {
    /// Mask sequence for one character, tracked through the whole clip.
    fn segment(&self, clip: &VideoClip, character_id: &str, keyword: &str) -> Result<MaskSequence, BackendError>;
}

pub trait FaceSwapBackend: Send + Sync {
    fn swap(&self, clip: &VideoClip, masks: &MaskSequence, portrait: &Raster) -> Result<VideoClip, BackendError>;
}

pub trait LipSyncBackend: Send + Sync {
    /// `audio` starts at `range.start`.
    fn lipsync(
        &self,
        clip: &VideoClip,
        masks: &MaskSequence,
        audio: &AudioTrack,
        range: FrameRange,
    ) -> Result<VideoClip, BackendError>;
}

pub trait MusicBackend: Send + Sync {
    /// Returns a track to be looped and trimmed by the engine; `duration_samples`
    /// is the target length after fitting.
    fn compose(&self, direction: &MusicDirection, duration_samples: u64) -> Result<AudioTrack, BackendError>;
}

/// One handle per backend kind.
#[derive(Clone)]
pub struct Backends {
    pub text: Arc<dyn TextBackend>,
    pub video: Arc<dyn VideoBackend>,
    pub portrait: Arc<dyn PortraitBackend>,
    pub tts: Arc<dyn TtsBackend>,
    pub segmentation: Arc<dyn SegmentationBackend>,
    pub faceswap: Arc<dyn FaceSwapBackend>,
    pub lipsync: Arc<dyn LipSyncBackend>,
    pub music: Arc<dyn MusicBackend>,
}

impl Backends {
    /// All kinds served by one mock.
    pub fn from_mock(mock: MockBackend) -> Self {
        let m = Arc::new(mock);
        Backends {
            text: m.clone(),
            video: m.clone(),
            portrait: m.clone(),
            tts: m.clone(),
            segmentation: m.clone(),
            faceswap: m.clone(),
            lipsync: m.clone(),
            music: m,
        }
    }

    pub fn mock(seed: u64) -> Self {
        Backends::from_mock(MockBackend::new(seed))
    }

    /// Resolves every URI, launching each distinct subprocess once.
    /// Subprocess adapters get `work_dir` as their shared directory.
    pub fn from_uris(uris: &BackendUris, work_dir: &Path) -> Result<Self, BackendError> {
        enum Handle {
            Mock(Arc<MockBackend>),
            Process(Arc<SubprocessBackend>),
        }
        let mut cache: HashMap<&str, Handle> = HashMap::new();
        let mut resolve = |kind: BackendKind| -> Result<(), BackendError> {
            let uri = uris.get(kind);
            if let Some(Handle::Process(p)) = cache.get(uri) {
                return p.require(kind);
            }
            if cache.contains_key(uri) {
                return Ok(());
            }
            let handle = match BackendUri::parse(uri)? {
                BackendUri::Mock { seed, faults } => Handle::Mock(Arc::new(MockBackend::with_faults(seed, faults))),
                BackendUri::Subprocess { program, args } => {
                    let dir = work_dir.join(format!("backend_{}", cache.len()));
                    let process = SubprocessBackend::spawn(&program, &args, &dir)?;
                    process.require(kind)?;
                    Handle::Process(Arc::new(process))
                }
            };
            cache.insert(uri, handle);
            Ok(())
        };
        for kind in BackendKind::ALL {
            resolve(kind)?;
        }
        macro_rules! pick {
            ($kind:expr) => {
                match &cache[uris.get($kind)] {
                    Handle::Mock(m) => m.clone() as _,
                    Handle::Process(p) => p.clone() as _,
                }
            };
        }
        Ok(Backends {
            text: pick!(BackendKind::Text),
            video: pick!(BackendKind::Video),
            portrait: pick!(BackendKind::Portrait),
            tts: pick!(BackendKind::Tts),
            segmentation: pick!(BackendKind::Segmentation),
            faceswap: pick!(BackendKind::Faceswap),
            lipsync: pick!(BackendKind::Lipsync),
            music: pick!(BackendKind::Music),
        })
    }
}

/// Backend URI per kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendUris {
    pub text: String,
    pub video: String,
    pub portrait: String,
    pub tts: String,
    pub segmentation: String,
    pub faceswap: String,
    pub lipsync: String,
    pub music: String,
}

impl BackendUris {
    pub fn all(uri: &str) -> Self {
        BackendUris {
            text: uri.to_string(),
            video: uri.to_string(),
            portrait: uri.to_string(),
            tts: uri.to_string(),
            segmentation: uri.to_string(),
            faceswap: uri.to_string(),
            lipsync: uri.to_string(),
            music: uri.to_string(),
        }
    }

    pub fn get(&self, kind: BackendKind) -> &str {
        match kind {
            BackendKind::Text => &self.text,
            BackendKind::Video => &self.video,
            BackendKind::Portrait => &self.portrait,
            BackendKind::Tts => &self.tts,
            BackendKind::Segmentation => &self.segmentation,
            BackendKind::Faceswap => &self.faceswap,
            BackendKind::Lipsync => &self.lipsync,
            BackendKind::Music => &self.music,
        }
    }

    pub fn set(&mut self, kind: BackendKind, uri: impl Into<String>) {
        let slot = match kind {
            BackendKind::Text => &mut self.text,
            BackendKind::Video => &mut self.video,
            BackendKind::Portrait => &mut self.portrait,
            BackendKind::Tts => &mut self.tts,
            BackendKind::Segmentation => &mut self.segmentation,
            BackendKind::Faceswap => &mut self.faceswap,
            BackendKind::Lipsync => &mut self.lipsync,
            BackendKind::Music => &mut self.music,
        };
        *slot = uri.into();
    }

    /// Checks that every URI parses without launching anything.
    pub fn check(&self) -> Result<(), BackendError> {
        BackendKind::ALL.into_iter().try_for_each(|k| BackendUri::parse(self.get(k)).map(|_| ()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendUri {
    Mock { seed: u64, faults: Vec<MockFault> },
    Subprocess { program: PathBuf, args: Vec<String> },
}

impl BackendUri {
    pub fn parse(uri: &str) -> Result<Self, BackendError> {
        let bad = || BackendError::BadUri(uri.to_string());
        if let Some(rest) = uri.strip_prefix("mock:") {
            let (seed, query) = match rest.split_once('?') {
                Some((s, q)) => (s, Some(q)),
                None => (rest, None),
            };
            let seed = seed.parse::<u64>().map_err(|_| bad())?;
            let mut faults = Vec::new();
            if let Some(query) = query {
                for pair in query.split('&') {
                    let value = pair.strip_prefix("fault=").ok_or_else(bad)?;
                    for flag in value.split(',').filter(|f| !f.is_empty()) {
                        faults.push(MockFault::parse(flag).ok_or_else(bad)?);
                    }
                }
            }
            Ok(BackendUri::Mock { seed, faults })
        } else if let Some(rest) = uri.strip_prefix("subprocess:") {
            let mut parts = rest.split_whitespace();
            let program = parts.next().ok_or_else(bad)?;
            Ok(BackendUri::Subprocess { program: PathBuf::from(program), args: parts.map(String::from).collect() })
        } else {
            Err(bad())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agentflow::AgentRole;

    #[test]
    fn parses_mock_uris() {
        assert_eq!(BackendUri::parse("mock:7").unwrap(), BackendUri::Mock { seed: 7, faults: vec![] });
        assert_eq!(
            BackendUri::parse("mock:7?fault=overflow_dialogue,leaky_swap").unwrap(),
            BackendUri::Mock { seed: 7, faults: vec![MockFault::OverflowDialogue, MockFault::LeakySwap] }
        );
        assert_eq!(
            BackendUri::parse("mock:1?fault=garbage:storyteller&fault=miss:ava_1").unwrap(),
            BackendUri::Mock {
                seed: 1,
                faults: vec![MockFault::Garbage(AgentRole::Storyteller), MockFault::Miss("ava_1".into())]
            }
        );
    }

    #[test]
    fn parses_subprocess_uris() {
        assert_eq!(
            BackendUri::parse("subprocess:/usr/bin/adapter --seed 7").unwrap(),
            BackendUri::Subprocess { program: "/usr/bin/adapter".into(), args: vec!["--seed".into(), "7".into()] }
        );
    }

    #[test]
    fn rejects_bad_uris() {
        for uri in ["", "mock:", "mock:x", "mock:1?fault=nope", "mock:1?bogus=1", "http://x", "subprocess:"] {
            assert!(BackendUri::parse(uri).is_err(), "{uri}");
        }
    }

    #[test]
    fn kinds_round_trip_through_names() {
        for k in BackendKind::ALL {
            assert_eq!(BackendKind::parse(k.as_str()), Some(k));
        }
        assert_eq!(BackendKind::parse("hologram"), None);
    }
}
