//! End-to-end runs: narrative, assets, integration, assembly.
//!
//! A run writes everything under `<output_root>/<run_id>/`:
//!
//! ```text
//! blueprint.json            canonical blueprint
//! violations.json           final inspection report
//! assets/                   portrait and voice registry
//! scenes/<scene_id>/audio.wav
//! work/<scene_id>/...       integration intermediates (optional)
//! movie/frames/%06d.ppm
//! movie/audio.wav
//! movie/subtitles.srt
//! manifest.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agentflow::{self, FlowError, PipelineConfig, SceneSettings};
use crate::assembly::{
    self, compose_scene, generate_music, AssemblyError, AssetRecord, FileRef, MovieWriter, PlacedLine, ProjectManifest,
    RunSettings, SceneRecord, Toggles,
};
use crate::assets::{self, AssetError, AssetKind, AssetRegistry, PortraitAsset, VoiceLineAsset};
use crate::backend::{BackendError, BackendKind, BackendUris, Backends, SceneVideoRequest};
use crate::blueprint::{self, BlueprintError, CinematicBlueprint, StoryConcept, DEFAULT_FPS, DEFAULT_FRAME_COUNT};
use crate::canonical::{canonical_digest, sha256_hex};
use crate::inspector::{self, RuleCode, Violation, DEFAULT_RELEVANCE_THRESHOLD};
use crate::integration::{self, CastMember, IntegrationError, SpokenLine};
use crate::media::{scene_sample_count, wav_bytes, AudioTrack, FrameRange, SAMPLE_RATE};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Run configuration. Every field has a default, so a config file only
/// lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Backend URI per kind name, plus an optional `all` entry applied
    /// first. Unlisted kinds use `mock:<seed>`.
    pub backends: BTreeMap<String, String>,
    pub seed: u64,
    pub fps: u32,
    pub frames_per_scene: u32,
    pub width: u32,
    pub height: u32,
    pub max_repair_attempts: u32,
    pub parse_retries: u32,
    pub strict: bool,
    pub relevance_threshold: f64,
    pub enable_nsm: bool,
    pub enable_qi: bool,
    pub enable_dci: bool,
    pub keep_intermediates: bool,
    pub output_root: PathBuf,
    /// Defaults to a digest of the story and configuration.
    pub run_id: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backends: BTreeMap::new(),
            seed: 0,
            fps: DEFAULT_FPS,
            frames_per_scene: DEFAULT_FRAME_COUNT,
            width: 512,
            height: 512,
            max_repair_attempts: 3,
            parse_retries: 2,
            strict: true,
            relevance_threshold: DEFAULT_RELEVANCE_THRESHOLD,
            enable_nsm: true,
            enable_qi: true,
            enable_dci: true,
            keep_intermediates: false,
            output_root: PathBuf::from("out"),
            run_id: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            RunError::Config(format!("config {path}: {}", e.into_inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn backend_uris(&self) -> Result<BackendUris, RunError> {
        let default = format!("mock:{}", self.seed);
        let mut uris = BackendUris::all(self.backends.get("all").unwrap_or(&default));
        for (key, uri) in &self.backends {
            match BackendKind::parse(key) {
                Some(kind) => uris.set(kind, uri.clone()),
                None if key == "all" => {}
                None => return Err(RunError::Config(format!("unknown backend kind {key:?}"))),
            }
        }
        uris.check().map_err(|e| RunError::Config(e.to_string()))?;
        Ok(uris)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |msg: &str| Err(RunError::Config(msg.to_string()));
        if self.fps == 0 || self.fps > SAMPLE_RATE {
            return bad("fps must be between 1 and the audio sample rate");
        }
        if self.frames_per_scene == 0 {
            return bad("frames_per_scene must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("resolution must be positive");
        }
        if !(0.0..=1.0).contains(&self.relevance_threshold) {
            return bad("relevance_threshold must lie in [0, 1]");
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return bad("run_id may only contain letters, digits, '-' and '_'");
            }
        }
        self.backend_uris().map(|_| ())
    }

    pub fn toggles(&self) -> Toggles {
        Toggles { nsm: self.enable_nsm, qi: self.enable_qi, dci: self.enable_dci }
    }

    fn settings(&self) -> RunSettings {
        RunSettings {
            fps: self.fps,
            frames_per_scene: self.frames_per_scene,
            width: self.width,
            height: self.height,
            max_repair_attempts: self.max_repair_attempts,
            relevance_threshold: self.relevance_threshold,
        }
    }

    fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            max_repair_attempts: self.max_repair_attempts,
            parse_retries: self.parse_retries,
            strict: self.strict,
            relevance_threshold: self.relevance_threshold,
            settings: SceneSettings { fps: self.fps, frame_count: self.frames_per_scene },
            inspect: self.enable_qi,
        }
    }

    fn derived_run_id(&self, input_hash: &str) -> String {
        let mut keyed = self.clone();
        keyed.output_root = PathBuf::new();
        keyed.run_id = None;
        keyed.keep_intermediates = false;
        let digest = canonical_digest(&(input_hash, keyed));
        format!("run-{}", &digest[..12])
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("E_IO: {0}")]
    Io(String),
    #[error(transparent)]
    Blueprint(#[from] BlueprintError),
    #[error("{} blocking violation(s): {}", .0.iter().filter(|v| v.is_blocking()).count(), first_codes(.0))]
    Violations(Vec<Violation>),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("contract breach: {0}")]
    Contract(String),
}

fn first_codes(violations: &[Violation]) -> String {
    violations.iter().filter(|v| v.is_blocking()).map(|v| format!("{} at {}", v.code.as_str(), v.path)).collect::<Vec<_>>().join(", ")
}

impl From<std::io::Error> for RunError {
    fn from(err: std::io::Error) -> Self {
        RunError::Io(err.to_string())
    }
}

impl RunError {
    /// Process exit code: 2 config/IO, 3 blocking violations, 4 backend
    /// failure, 5 internal contract breach.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) | RunError::Blueprint(_) => 2,
            RunError::Violations(_) => 3,
            RunError::Flow(e) => match e {
                FlowError::Unrepairable { .. } => 3,
                FlowError::Backend(_) | FlowError::AgentOutput { .. } => 4,
                FlowError::Precondition(_) => 5,
            },
            RunError::Backend(BackendError::BadUri(_)) => 2,
            RunError::Backend(_) => 4,
            RunError::Asset(e) => match e {
                AssetError::Backend(_) | AssetError::BadDimensions { .. } => 4,
                AssetError::AudioOverrun { .. } => 3,
                AssetError::Io(_) => 2,
                _ => 5,
            },
            RunError::Integration(e) => match e {
                IntegrationError::Backend { .. } | IntegrationError::NotFound(_) => 4,
                IntegrationError::Media(m) if m.code() == "E_IO" => 2,
                _ => 5,
            },
            RunError::Assembly(e) => match e {
                AssemblyError::Backend(_) => 4,
                AssemblyError::Io(_) => 2,
                _ => 5,
            },
            RunError::Contract(_) => 5,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            RunError::Config(_) => "E_CONFIG",
            RunError::Io(_) => "E_IO",
            RunError::Blueprint(e) => e.code(),
            RunError::Violations(_) => "E_VIOLATIONS",
            RunError::Flow(e) => e.code(),
            RunError::Backend(_) => "E_BACKEND",
            RunError::Asset(e) => e.code(),
            RunError::Integration(e) => e.code(),
            RunError::Assembly(e) => e.code(),
            RunError::Contract(_) => "E_CONTRACT",
        }
    }

    /// Violations to report, if this failure carries any.
    pub fn violations(&self) -> Option<&[Violation]> {
        match self {
            RunError::Violations(v) => Some(v),
            RunError::Flow(FlowError::Unrepairable { violations, .. }) => Some(violations),
            _ => None,
        }
    }
}

/// Result of a successful run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub blueprint: CinematicBlueprint,
    pub violations: Vec<Violation>,
    pub manifest: ProjectManifest,
}

/// Clears stale outputs of an earlier run with the same id. The asset
/// registry is kept as a cache.
fn prepare_run_dir(run_dir: &Path) -> Result<(), RunError> {
    for sub in ["movie", "work", "scenes"] {
        let p = run_dir.join(sub);
        if p.exists() {
            fs::remove_dir_all(&p)?;
        }
    }
    for file in [assembly::MANIFEST_FILE, "blueprint.json", "violations.json"] {
        let p = run_dir.join(file);
        if p.exists() {
            fs::remove_file(&p)?;
        }
    }
    fs::create_dir_all(run_dir)?;
    Ok(())
}

fn run_dir_for(config: &RunConfig, input_hash: &str) -> PathBuf {
    let id = config.run_id.clone().unwrap_or_else(|| config.derived_run_id(input_hash));
    config.output_root.join(id)
}

/// Narrative synthesis through to the finished movie.
pub fn generate(story: &StoryConcept, config: &RunConfig) -> Result<RunOutcome, RunError> {
    config.validate()?;
    if story.text.trim().is_empty() {
        return Err(RunError::Config("story text is empty".into()));
    }
    let uris = config.backend_uris()?;
    let run_dir = run_dir_for(config, &canonical_digest(story));
    prepare_run_dir(&run_dir)?;
    let backends = Backends::from_uris(&uris, &run_dir.join("backends"))?;

    let pcfg = config.pipeline_config();
    let (bp, violations, rounds) = if config.enable_nsm {
        let out = agentflow::run_pipeline(story, backends.text.as_ref(), &pcfg)?;
        (out.blueprint, out.violations, out.repair_rounds)
    } else {
        let bp = agentflow::template_blueprint(story, pcfg.settings);
        let violations = if config.enable_qi {
            inspector::inspect(&bp, story, config.relevance_threshold)
        } else {
            vec![]
        };
        if inspector::has_blocking(&violations) {
            return Err(RunError::Violations(violations));
        }
        (bp, violations, 0)
    };
    produce(&bp, &violations, rounds, &backends, &uris, config, &run_dir)
}

/// Parses a blueprint document and, when inspection is enabled, runs the
/// rule engine over it against its own story.
pub fn check_document(text: &str, config: &RunConfig) -> Result<(CinematicBlueprint, Vec<Violation>), RunError> {
    let bp = blueprint::parse_draft(text)?;
    blueprint::check_structure(&bp)?;
    let violations = if config.enable_qi {
        inspector::inspect(&bp, &bp.story, config.relevance_threshold)
    } else {
        vec![]
    };
    Ok((bp, violations))
}

/// Media stages from an existing blueprint document.
pub fn render(text: &str, config: &RunConfig) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let (bp, violations) = check_document(text, config)?;
    if inspector::has_blocking(&violations) {
        return Err(RunError::Violations(violations));
    }
    let uris = config.backend_uris()?;
    let run_dir = run_dir_for(config, &canonical_digest(&bp));
    prepare_run_dir(&run_dir)?;
    let backends = Backends::from_uris(&uris, &run_dir.join("backends"))?;
    produce(&bp, &violations, 0, &backends, &uris, config, &run_dir)
}

/// Rules that media stages cannot work around, enforced even when
/// inspection is off.
fn hard_violations(bp: &CinematicBlueprint) -> Vec<Violation> {
    inspector::validate(bp)
        .into_iter()
        .filter(|v| matches!(v.code, RuleCode::RefCharacter | RuleCode::FpsMismatch))
        .collect()
}

fn rel(path: &str, sha256: String) -> FileRef {
    FileRef { path: path.to_string(), sha256 }
}

fn write_file(run_dir: &Path, rel_path: &str, bytes: &[u8]) -> Result<FileRef, RunError> {
    let path = run_dir.join(rel_path);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, bytes)?;
    Ok(rel(rel_path, sha256_hex(bytes)))
}

fn produce(
    bp: &CinematicBlueprint,
    violations: &[Violation],
    repair_rounds: u32,
    backends: &Backends,
    uris: &BackendUris,
    config: &RunConfig,
    run_dir: &Path,
) -> Result<RunOutcome, RunError> {
    let hard = hard_violations(bp);
    if !hard.is_empty() {
        return Err(RunError::Violations(hard));
    }
    if bp.scenes.is_empty() {
        return Err(RunError::Contract("blueprint has no scenes".into()));
    }
    if let Some(s) = bp.scenes.iter().find(|s| s.fps > SAMPLE_RATE) {
        return Err(RunError::Config(format!("scene {} runs at {} fps, above the audio sample rate", s.scene_id, s.fps)));
    }

    let blueprint_ref = write_file(run_dir, "blueprint.json", blueprint::serialize_blueprint(bp).as_bytes())?;
    let violations_ref = write_file(run_dir, "violations.json", inspector::report_json(violations).as_bytes())?;

    // Character assets.
    let registry = AssetRegistry::open(run_dir.join("assets"))?;
    let seed = bp.story.seed;
    let mut asset_records = Vec::new();
    let record = |character_id: &str, kind, dialogue_index, source_hash: &str| -> Result<AssetRecord, RunError> {
        let entry = registry.entry(source_hash).ok_or_else(|| RunError::Contract(format!("asset {source_hash} not indexed")))?;
        Ok(AssetRecord {
            character_id: character_id.to_string(),
            kind,
            dialogue_index,
            source_hash: source_hash.to_string(),
            file: rel(&format!("assets/{}", entry.path), entry.sha256),
        })
    };
    let mut portraits: BTreeMap<&str, PortraitAsset> = BTreeMap::new();
    for c in &bp.characters {
        if bp.scenes.iter().any(|s| s.character_ids.contains(&c.character_id)) {
            let p = assets::generate_portrait(c, seed, backends.portrait.as_ref(), &registry)?;
            asset_records.push(record(&c.character_id, AssetKind::Portrait, None, &p.source_hash)?);
            portraits.insert(&c.character_id, p);
        }
    }
    let mut voices: BTreeMap<usize, (FrameRange, VoiceLineAsset)> = BTreeMap::new();
    for (k, line) in bp.dialogue.iter().enumerate() {
        let scene = bp.scene(&line.scene_id).expect("structure check resolves dialogue scenes");
        let Some(range) = line.clipped_range(scene.frame_count) else { continue };
        let profile = bp.character(&line.character_id).expect("hard rules resolve dialogue characters");
        let v = assets::generate_voice_line(profile, line, k, range, scene.fps, backends.tts.as_ref(), &registry)?;
        asset_records.push(record(&line.character_id, AssetKind::Voice, Some(k), &v.source_hash)?);
        voices.insert(k, (range, v));
    }

    // Scenes.
    let mut writer = MovieWriter::new(run_dir, "movie")?;
    let mut scene_records = Vec::new();
    for scene in &bp.scenes {
        let request = SceneVideoRequest {
            scene_id: scene.scene_id.clone(),
            prompt: format!("{} | {}", scene.visual_description, scene.camera_notes),
            frame_count: scene.frame_count,
            fps: scene.fps,
            width: config.width,
            height: config.height,
            seed,
        };
        let mut clip = backends.video.render_scene(&request)?;
        if (clip.width, clip.height, clip.fps, clip.frame_count()) != (config.width, config.height, scene.fps, scene.frame_count as usize)
            || clip.check().is_err()
        {
            return Err(RunError::Contract(format!(
                "video backend returned {}x{}@{} with {} frames for scene {}",
                clip.width,
                clip.height,
                clip.fps,
                clip.frame_count(),
                scene.scene_id
            )));
        }
        let lines: Vec<(usize, &blueprint::DialogueLine, FrameRange, &VoiceLineAsset)> = bp
            .scene_dialogue(&scene.scene_id)
            .filter_map(|(k, line)| voices.get(&k).map(|(range, v)| (k, line, *range, v)))
            .collect();

        let mut trace = None;
        if config.enable_dci {
            let cast: Vec<CastMember> = bp
                .scene_characters(scene)
                .map(|profile| CastMember { profile, portrait: &portraits[profile.character_id.as_str()] })
                .collect();
            let spoken: Vec<SpokenLine> = lines
                .iter()
                .map(|(_, line, range, voice)| SpokenLine { character_id: &line.character_id, range: *range, voice })
                .collect();
            let keep = config.keep_intermediates.then(|| run_dir.join("work").join(&scene.scene_id));
            let (integrated, t) = integration::integrate_scene(&clip, &cast, &spoken, backends, keep.as_deref())?;
            clip = integrated;
            trace = Some(t);
        }

        let len = scene_sample_count(scene.frame_count as u64, scene.fps, SAMPLE_RATE) as usize;
        let music = match &scene.music_direction {
            Some(direction) => generate_music(direction, len, backends.music.as_ref())?,
            None => AudioTrack::silence(len),
        };
        let placed: Vec<PlacedLine> = lines
            .iter()
            .map(|(_, line, range, voice)| PlacedLine {
                range: *range,
                speaker: &bp.character(&line.character_id).expect("resolved").name,
                text: &line.text,
                audio: &voice.audio,
            })
            .collect();
        let render = compose_scene(scene, clip, &placed, &music)?;
        let audio_ref = write_file(run_dir, &format!("scenes/{}/audio.wav", scene.scene_id), &wav_bytes(&render.audio))?;
        let placement = writer.push(&render)?;
        scene_records.push(SceneRecord {
            scene_id: scene.scene_id.clone(),
            frames: placement.frames,
            audio: audio_ref,
            sample_count: placement.sample_count,
            subtitle_count: render.subtitles.len(),
            integration: trace,
        });
    }
    let movie = writer.finish()?;

    let manifest = ProjectManifest {
        engine_version: ENGINE_VERSION.to_string(),
        run_id: run_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        story_hash: canonical_digest(&bp.story),
        seed,
        backends: uris.clone(),
        toggles: config.toggles(),
        settings: config.settings(),
        blueprint: blueprint_ref,
        violations: violations_ref,
        repair_rounds,
        assets: asset_records,
        scenes: scene_records,
        movie,
    };
    manifest.write(run_dir)?;
    Ok(RunOutcome { run_dir: run_dir.to_path_buf(), blueprint: bp.clone(), violations: violations.to_vec(), manifest })
}
