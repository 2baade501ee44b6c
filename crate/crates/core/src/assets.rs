//! Character assets: portraits and voice lines, persisted in a
//! content-addressed registry so each character is rendered once per run.
//!
//! Registry layout under its root directory:
//!
//! ```text
//! <root>/<hash[0..2]>/<hash>.ppm
//! <root>/<hash[0..2]>/<hash>.wav
//! <root>/index.json
//! ```
//!
//! The key (`source_hash`) is the SHA-256 of the canonical serialization of
//! the generation inputs. The index also records the SHA-256 of the stored
//! bytes, which every load verifies.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backend::{BackendError, PortraitBackend, TtsBackend};
use crate::blueprint::{CharacterProfile, DialogueLine};
use crate::canonical::{canonical_digest, sha256_hex, to_canonical_string};
use crate::media::{
    decode_ppm, encode_ppm, frame_range_to_sample_range, read_wav_bytes, wav_bytes, AudioTrack, FrameRange,
    MediaError, Raster, SAMPLE_RATE,
};

/// Portrait edge length in pixels.
pub const PORTRAIT_SIZE: u32 = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssetError {
    #[error("E_MISS: no asset stored under {0}")]
    Miss(String),
    #[error("E_CORRUPT: asset {key}: {detail}")]
    Corrupt { key: String, detail: String },
    #[error("E_CONFLICT: asset {0} already stored with different content")]
    Conflict(String),
    #[error("E_BAD_DIMENSIONS: expected {PORTRAIT_SIZE}x{PORTRAIT_SIZE} portrait, got {width}x{height}")]
    BadDimensions { width: u32, height: u32 },
    #[error("E_AUDIO_OVERRUN: voice line {index} lasts {samples} samples, its frame range allows {limit}")]
    AudioOverrun { index: usize, samples: usize, limit: u64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("E_IO: {0}")]
    Io(String),
}

impl AssetError {
    pub fn code(&self) -> &'static str {
        match self {
            AssetError::Miss(_) => "E_MISS",
            AssetError::Corrupt { .. } => "E_CORRUPT",
            AssetError::Conflict(_) => "E_CONFLICT",
            AssetError::BadDimensions { .. } => "E_BAD_DIMENSIONS",
            AssetError::AudioOverrun { .. } => "E_AUDIO_OVERRUN",
            AssetError::Precondition(_) => "E_PRECONDITION",
            AssetError::Backend(_) => "E_BACKEND",
            AssetError::Media(e) => e.code(),
            AssetError::Io(_) => "E_IO",
        }
    }
}

impl From<std::io::Error> for AssetError {
    fn from(err: std::io::Error) -> Self {
        AssetError::Io(err.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    Portrait,
    Voice,
}

impl AssetKind {
    pub fn extension(self) -> &'static str {
        match self {
            AssetKind::Portrait => "ppm",
            AssetKind::Voice => "wav",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub kind: AssetKind,
    /// Relative to the registry root.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortraitAsset {
    pub character_id: String,
    pub image: Raster,
    pub source_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoiceLineAsset {
    pub character_id: String,
    pub dialogue_index: usize,
    pub audio: AudioTrack,
    pub emotion: String,
    pub source_hash: String,
}

/// Content-addressed asset store. Stores under one key are serialized and
/// idempotent; storing different bytes under an existing key is an error.
#[derive(Debug)]
pub struct AssetRegistry {
    root: PathBuf,
    index: Mutex<BTreeMap<String, IndexEntry>>,
}

impl AssetRegistry {
    /// Opens (or creates) a registry rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, AssetError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let index_path = root.join("index.json");
        let index = if index_path.exists() {
            serde_json::from_slice(&fs::read(&index_path)?).map_err(|e| AssetError::Corrupt {
                key: "index.json".into(),
                detail: e.to_string(),
            })?
        } else {
            BTreeMap::new()
        };
        Ok(AssetRegistry { root, index: Mutex::new(index) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.lock().expect("registry lock").contains_key(key)
    }

    pub fn entry(&self, key: &str) -> Option<IndexEntry> {
        self.index.lock().expect("registry lock").get(key).cloned()
    }

    pub fn entries(&self) -> BTreeMap<String, IndexEntry> {
        self.index.lock().expect("registry lock").clone()
    }

    /// Absolute path of a stored asset.
    pub fn path_of(&self, entry: &IndexEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn store(&self, key: &str, kind: AssetKind, bytes: &[u8]) -> Result<IndexEntry, AssetError> {
        if key.len() < 2 || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(AssetError::Precondition(format!("asset key {key:?} is not a hex digest")));
        }
        let sha256 = sha256_hex(bytes);
        let mut index = self.index.lock().expect("registry lock");
        if let Some(existing) = index.get(key) {
            return if existing.sha256 == sha256 && existing.kind == kind {
                Ok(existing.clone())
            } else {
                Err(AssetError::Conflict(key.to_string()))
            };
        }
        let rel = format!("{}/{}.{}", &key[..2], key, kind.extension());
        let path = self.root.join(&rel);
        fs::create_dir_all(path.parent().expect("asset path has a parent"))?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        let entry = IndexEntry { kind, path: rel, sha256 };
        index.insert(key.to_string(), entry.clone());
        let tmp_index = self.root.join("index.json.tmp");
        fs::write(&tmp_index, to_canonical_string(&*index))?;
        fs::rename(&tmp_index, self.root.join("index.json"))?;
        Ok(entry)
    }

    /// Loads and verifies the bytes stored under `key`.
    pub fn load(&self, key: &str) -> Result<Vec<u8>, AssetError> {
        let entry = self.entry(key).ok_or_else(|| AssetError::Miss(key.to_string()))?;
        let bytes = fs::read(self.path_of(&entry)).map_err(|e| AssetError::Corrupt {
            key: key.to_string(),
            detail: e.to_string(),
        })?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(AssetError::Corrupt { key: key.to_string(), detail: "content hash mismatch".into() });
        }
        Ok(bytes)
    }

    /// Re-verifies every indexed file.
    pub fn verify_all(&self) -> Result<(), AssetError> {
        for key in self.entries().keys() {
            self.load(key)?;
        }
        Ok(())
    }
}

pub fn portrait_source_hash(profile: &CharacterProfile, seed: u64) -> String {
    canonical_digest(&json!({"kind": "portrait", "profile": profile, "seed": seed}))
}

pub fn voice_source_hash(profile: &CharacterProfile, line: &DialogueLine) -> String {
    canonical_digest(&json!({
        "kind": "voice",
        "voice_spec": profile.voice_spec,
        "text": line.text,
        "emotion": line.emotion,
    }))
}

/// Renders (or reuses) the reference portrait of one character.
pub fn generate_portrait(
    profile: &CharacterProfile,
    seed: u64,
    backend: &dyn PortraitBackend,
    registry: &AssetRegistry,
) -> Result<PortraitAsset, AssetError> {
    let key = portrait_source_hash(profile, seed);
    let image = if registry.contains(&key) {
        let (width, height, data) = decode_ppm(&registry.load(&key)?)?;
        Raster { width, height, data }
    } else {
        let image = backend.portrait(profile, seed)?;
        if (image.width, image.height) != (PORTRAIT_SIZE, PORTRAIT_SIZE)
            || image.data.len() != (image.width * image.height * 3) as usize
        {
            return Err(AssetError::BadDimensions { width: image.width, height: image.height });
        }
        registry.store(&key, AssetKind::Portrait, &encode_ppm(image.width, image.height, &image.data))?;
        image
    };
    Ok(PortraitAsset { character_id: profile.character_id.clone(), image, source_hash: key })
}

/// Synthesizes (or reuses) one dialogue line. `range` is the span the line
/// will occupy, which may be narrower than `line.frame_range` when the line
/// was clipped to its scene; the audio must fit inside it.
pub fn generate_voice_line(
    profile: &CharacterProfile,
    line: &DialogueLine,
    dialogue_index: usize,
    range: FrameRange,
    fps: u32,
    backend: &dyn TtsBackend,
    registry: &AssetRegistry,
) -> Result<VoiceLineAsset, AssetError> {
    if line.text.trim().is_empty() {
        return Err(AssetError::Precondition(format!("dialogue line {dialogue_index} has no text")));
    }
    if profile.character_id != line.character_id {
        return Err(AssetError::Precondition(format!(
            "dialogue line {dialogue_index} belongs to {}, not {}",
            line.character_id, profile.character_id
        )));
    }
    let key = voice_source_hash(profile, line);
    let audio = if registry.contains(&key) {
        read_wav_bytes(&registry.load(&key)?)?
    } else {
        let audio = backend.synthesize(&profile.voice_spec, &line.text, &line.emotion)?;
        if audio.sample_rate != SAMPLE_RATE {
            return Err(MediaError::RateMismatch { expected: SAMPLE_RATE, found: audio.sample_rate }.into());
        }
        audio
    };
    let limit = frame_range_to_sample_range(range, fps, SAMPLE_RATE).len();
    if audio.len() as u64 > limit {
        return Err(AssetError::AudioOverrun { index: dialogue_index, samples: audio.len(), limit });
    }
    registry.store(&key, AssetKind::Voice, &wav_bytes(&audio))?;
    Ok(VoiceLineAsset {
        character_id: profile.character_id.clone(),
        dialogue_index,
        audio,
        emotion: line.emotion.clone(),
        source_hash: key,
    })
}
