//! Cinematic blueprint data model: the structured plan shared by the agent
//! stage and every media stage.
//!
//! Parsing has two layers. [`parse_draft`] checks syntax and schema only and
//! is what the validation and render paths use, so consistency problems
//! surface as inspector violations instead of parse failures.
//! [`parse_blueprint`] additionally enforces every structural and referential
//! invariant and returns a fully resolved value.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
pub use crate::media::FrameRange;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_FPS: u32 = 24;
pub const DEFAULT_FRAME_COUNT: u32 = 129;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlueprintError {
    #[error("E_SYNTAX: {0}")]
    Syntax(String),
    #[error("E_SCHEMA at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("E_REF: unresolved identifier {0:?}")]
    Ref(String),
}

impl BlueprintError {
    pub fn code(&self) -> &'static str {
        match self {
            BlueprintError::Syntax(_) => "E_SYNTAX",
            BlueprintError::Schema { .. } => "E_SCHEMA",
            BlueprintError::Ref(_) => "E_REF",
        }
    }

    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        BlueprintError::Schema { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genre {
    Romance,
    Action,
    Drama,
    Family,
    Suspense,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoryConcept {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre_hint: Option<Genre>,
    pub seed: u64,
}

impl StoryConcept {
    pub fn new(text: impl Into<String>, seed: u64) -> Self {
        StoryConcept { text: text.into(), genre_hint: None, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pitch {
    Low,
    Mid,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pace {
    Slow,
    Normal,
    Fast,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoiceSpec {
    pub timbre_seed: u64,
    pub base_pitch: Pitch,
    pub pace: Pace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterProfile {
    pub character_id: String,
    pub name: String,
    pub appearance: BTreeMap<String, String>,
    pub personality: BTreeMap<String, String>,
    pub behavioral_patterns: Vec<String>,
    /// Segmentation grounding phrase. Owned by the character so one keyword
    /// tracks one identity across every scene.
    pub detection_keyword: String,
    pub voice_spec: VoiceSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MusicDirection {
    pub mood: String,
    pub intensity: f64,
    pub motif_seed: u64,
}

fn default_fps() -> u32 {
    DEFAULT_FPS
}

fn default_frame_count() -> u32 {
    DEFAULT_FRAME_COUNT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub scene_id: String,
    pub visual_description: String,
    pub character_ids: Vec<String>,
    pub camera_notes: String,
    #[serde(default = "default_frame_count")]
    pub frame_count: u32,
    #[serde(default = "default_fps")]
    pub fps: u32,
    pub emotional_tone: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub music_direction: Option<MusicDirection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueLine {
    pub scene_id: String,
    pub character_id: String,
    pub text: String,
    pub frame_range: FrameRange,
    pub emotion: String,
}

impl DialogueLine {
    /// The part of the frame range inside a scene of `frame_count` frames,
    /// or `None` when nothing of it remains.
    pub fn clipped_range(&self, frame_count: u32) -> Option<FrameRange> {
        FrameRange::new(self.frame_range.start, self.frame_range.end.min(frame_count))
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CinematicBlueprint {
    pub schema_version: u32,
    pub story: StoryConcept,
    pub characters: Vec<CharacterProfile>,
    /// Narrative order.
    pub scenes: Vec<SceneSpec>,
    pub dialogue: Vec<DialogueLine>,
}

impl CinematicBlueprint {
    pub fn character(&self, id: &str) -> Option<&CharacterProfile> {
        self.characters.iter().find(|c| c.character_id == id)
    }

    pub fn scene(&self, id: &str) -> Option<&SceneSpec> {
        self.scenes.iter().find(|s| s.scene_id == id)
    }

    /// Dialogue lines of one scene, with their indices into `dialogue`.
    pub fn scene_dialogue<'a>(&'a self, scene_id: &'a str) -> impl Iterator<Item = (usize, &'a DialogueLine)> + 'a {
        self.dialogue.iter().enumerate().filter(move |(_, d)| d.scene_id == scene_id)
    }

    /// Characters of a scene in blueprint character-list order.
    pub fn scene_characters<'a>(&'a self, scene: &'a SceneSpec) -> impl Iterator<Item = &'a CharacterProfile> + 'a {
        self.characters.iter().filter(move |c| scene.character_ids.contains(&c.character_id))
    }

    pub fn total_frames(&self) -> u64 {
        self.scenes.iter().map(|s| s.frame_count as u64).sum()
    }
}

/// `character_id` / `scene_id` token grammar: lowercase ASCII alphanumerics
/// and underscore, non-empty.
pub fn is_valid_token(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Syntax and schema only.
pub fn parse_draft(document: &str) -> Result<CinematicBlueprint, BlueprintError> {
    let value: serde_json::Value =
        serde_json::from_str(document).map_err(|e| BlueprintError::Syntax(e.to_string()))?;
    let bp: CinematicBlueprint = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        BlueprintError::schema(path, e.into_inner().to_string())
    })?;
    if bp.schema_version != SCHEMA_VERSION {
        return Err(BlueprintError::schema(
            "schema_version",
            format!("unsupported version {}", bp.schema_version),
        ));
    }
    Ok(bp)
}

/// Parses and fully resolves a blueprint.
pub fn parse_blueprint(document: &str) -> Result<CinematicBlueprint, BlueprintError> {
    let bp = parse_draft(document)?;
    check_structure(&bp)?;
    check_resolution(&bp)?;
    Ok(bp)
}

/// Canonical JSON: sorted keys, declared array order, no whitespace.
pub fn serialize_blueprint(bp: &CinematicBlueprint) -> String {
    canonical::to_canonical_string(bp)
}

/// Invariants of individual values plus dialogue scene resolution. These are
/// the checks the inspector does not cover.
pub fn check_structure(bp: &CinematicBlueprint) -> Result<(), BlueprintError> {
    if bp.schema_version != SCHEMA_VERSION {
        return Err(BlueprintError::schema("schema_version", "unsupported version"));
    }
    if bp.story.text.trim().is_empty() {
        return Err(BlueprintError::schema("story.text", "must not be blank"));
    }
    let mut seen = HashSet::new();
    for (i, c) in bp.characters.iter().enumerate() {
        let path = format!("characters[{i}]");
        if !is_valid_token(&c.character_id) {
            return Err(BlueprintError::schema(format!("{path}.character_id"), "invalid token"));
        }
        if !seen.insert(c.character_id.as_str()) {
            return Err(BlueprintError::schema(format!("{path}.character_id"), "duplicate id"));
        }
        if c.appearance.is_empty() {
            return Err(BlueprintError::schema(format!("{path}.appearance"), "needs at least one attribute"));
        }
    }
    let mut scene_frames = HashMap::new();
    for (i, s) in bp.scenes.iter().enumerate() {
        let path = format!("scenes[{i}]");
        if !is_valid_token(&s.scene_id) {
            return Err(BlueprintError::schema(format!("{path}.scene_id"), "invalid token"));
        }
        if scene_frames.insert(s.scene_id.as_str(), s.frame_count).is_some() {
            return Err(BlueprintError::schema(format!("{path}.scene_id"), "duplicate id"));
        }
        if s.frame_count == 0 {
            return Err(BlueprintError::schema(format!("{path}.frame_count"), "must be at least 1"));
        }
        if s.fps == 0 {
            return Err(BlueprintError::schema(format!("{path}.fps"), "must be positive"));
        }
        if let Some(m) = &s.music_direction {
            if !(0.0..=1.0).contains(&m.intensity) {
                return Err(BlueprintError::schema(
                    format!("{path}.music_direction.intensity"),
                    "outside [0, 1]",
                ));
            }
        }
    }
    for (k, d) in bp.dialogue.iter().enumerate() {
        let path = format!("dialogue[{k}]");
        if d.text.trim().is_empty() {
            return Err(BlueprintError::schema(format!("{path}.text"), "must not be blank"));
        }
        if d.frame_range.is_empty() {
            return Err(BlueprintError::schema(format!("{path}.frame_range"), "start must precede end"));
        }
        if !scene_frames.contains_key(d.scene_id.as_str()) {
            return Err(BlueprintError::Ref(d.scene_id.clone()));
        }
    }
    Ok(())
}

/// Cross-references, keyword presence, fps uniformity and dialogue timing
/// containment.
fn check_resolution(bp: &CinematicBlueprint) -> Result<(), BlueprintError> {
    let characters: HashSet<&str> = bp.characters.iter().map(|c| c.character_id.as_str()).collect();
    for (i, c) in bp.characters.iter().enumerate() {
        if c.detection_keyword.trim().is_empty() {
            return Err(BlueprintError::schema(format!("characters[{i}].detection_keyword"), "must not be blank"));
        }
    }
    let fps = bp.scenes.first().map(|s| s.fps);
    for (i, s) in bp.scenes.iter().enumerate() {
        if let Some(id) = s.character_ids.iter().find(|id| !characters.contains(id.as_str())) {
            return Err(BlueprintError::Ref(id.clone()));
        }
        if Some(s.fps) != fps {
            return Err(BlueprintError::schema(format!("scenes[{i}].fps"), "differs from scenes[0].fps"));
        }
    }
    for (k, d) in bp.dialogue.iter().enumerate() {
        if !characters.contains(d.character_id.as_str()) {
            return Err(BlueprintError::Ref(d.character_id.clone()));
        }
        let scene = bp.scene(&d.scene_id).ok_or_else(|| BlueprintError::Ref(d.scene_id.clone()))?;
        if d.frame_range.end > scene.frame_count {
            return Err(BlueprintError::schema(
                format!("dialogue[{k}].frame_range.end"),
                format!("exceeds scene frame count {}", scene.frame_count),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn character(id: &str, keyword: &str) -> CharacterProfile {
        CharacterProfile {
            character_id: id.to_string(),
            name: id.to_uppercase(),
            appearance: BTreeMap::from([("hair".to_string(), "black".to_string())]),
            personality: BTreeMap::from([("temper".to_string(), "calm".to_string())]),
            behavioral_patterns: vec!["paces when nervous".to_string()],
            detection_keyword: keyword.to_string(),
            voice_spec: VoiceSpec { timbre_seed: 11, base_pitch: Pitch::Mid, pace: Pace::Normal },
        }
    }

    pub fn scene(id: &str, chars: &[&str]) -> SceneSpec {
        SceneSpec {
            scene_id: id.to_string(),
            visual_description: "a rainy street at night".to_string(),
            character_ids: chars.iter().map(|s| s.to_string()).collect(),
            camera_notes: "slow dolly in".to_string(),
            frame_count: DEFAULT_FRAME_COUNT,
            fps: DEFAULT_FPS,
            emotional_tone: "tender".to_string(),
            music_direction: Some(MusicDirection { mood: "warm".to_string(), intensity: 0.5, motif_seed: 3 }),
        }
    }

    pub fn minimal() -> CinematicBlueprint {
        CinematicBlueprint {
            schema_version: SCHEMA_VERSION,
            story: StoryConcept::new("a rainy reunion", 7),
            characters: vec![character("ava", "woman in yellow raincoat")],
            scenes: vec![scene("s1", &["ava"])],
            dialogue: vec![],
        }
    }
}
