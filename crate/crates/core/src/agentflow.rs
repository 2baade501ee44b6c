//! Five-agent narrative flow over a text backend.
//!
//! The flow is a fixed chain: character designer, script writer,
//! storyteller, composer, quality inspector. Each agent sees exactly the
//! outputs of the agents before it. The engine merges the four content
//! fragments into a draft blueprint; the inspector only reports. When the
//! report has blocking findings, the repair loop re-invokes just the agents
//! that own them, then inspects again, for a bounded number of rounds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{BackendError, BackendKind, BackendRequest, TextBackend};
use crate::blueprint::{
    self, BlueprintError, CharacterProfile, CinematicBlueprint, DialogueLine, MusicDirection, Pace, Pitch, SceneSpec,
    StoryConcept, VoiceSpec, DEFAULT_FPS, DEFAULT_FRAME_COUNT, SCHEMA_VERSION,
};
use crate::canonical::hash_u64;
use crate::inspector::{self, Violation, DEFAULT_RELEVANCE_THRESHOLD};
use crate::media::FrameRange;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    CharacterDesigner,
    ScriptWriter,
    Storyteller,
    Composer,
    QualityInspector,
}

impl AgentRole {
    /// Flow order.
    pub const FLOW: [AgentRole; 5] = [
        AgentRole::CharacterDesigner,
        AgentRole::ScriptWriter,
        AgentRole::Storyteller,
        AgentRole::Composer,
        AgentRole::QualityInspector,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::CharacterDesigner => "character_designer",
            AgentRole::ScriptWriter => "script_writer",
            AgentRole::Storyteller => "storyteller",
            AgentRole::Composer => "composer",
            AgentRole::QualityInspector => "quality_inspector",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        AgentRole::FLOW.into_iter().find(|r| r.as_str() == s)
    }

    /// Roles whose outputs this role consumes.
    pub fn predecessors(self) -> &'static [AgentRole] {
        let i = AgentRole::FLOW.iter().position(|&r| r == self).expect("role in flow");
        &AgentRole::FLOW[..i]
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharactersFragment {
    pub characters: Vec<CharacterProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenesFragment {
    pub scenes: Vec<SceneSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueFragment {
    pub dialogue: Vec<DialogueLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MusicCue {
    pub scene_id: String,
    pub direction: MusicDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MusicFragment {
    pub music: Vec<MusicCue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectionFragment {
    pub violations: Vec<Violation>,
}

/// Scene timing the agents should write into their output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSettings {
    pub fps: u32,
    pub frame_count: u32,
}

impl Default for SceneSettings {
    fn default() -> Self {
        SceneSettings { fps: DEFAULT_FPS, frame_count: DEFAULT_FRAME_COUNT }
    }
}

/// Payload of a `text` backend request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextPayload {
    pub role: AgentRole,
    pub story: StoryConcept,
    pub upstream: BTreeMap<AgentRole, Value>,
    /// Repair round, 0 for the first pass.
    pub attempt: u32,
    /// Parse retry within one invocation.
    pub retry: u32,
    /// Findings this role is asked to fix.
    pub feedback: Vec<Violation>,
    pub settings: SceneSettings,
}

impl TextPayload {
    pub fn upstream_as<T: DeserializeOwned>(&self, role: AgentRole) -> Option<T> {
        self.upstream.get(&role).and_then(|v| serde_json::from_value(v.clone()).ok())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentContext {
    pub role: AgentRole,
    pub upstream: BTreeMap<AgentRole, Value>,
    pub story: StoryConcept,
    pub attempt: u32,
    pub feedback: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub max_repair_attempts: u32,
    /// Extra parse attempts per invocation in lenient mode.
    pub parse_retries: u32,
    /// Strict mode fails on the first unparseable fragment.
    pub strict: bool,
    pub relevance_threshold: f64,
    pub settings: SceneSettings,
    /// Run the quality inspector and repair loop.
    pub inspect: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_repair_attempts: 3,
            parse_retries: 2,
            strict: true,
            relevance_threshold: DEFAULT_RELEVANCE_THRESHOLD,
            settings: SceneSettings::default(),
            inspect: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("E_AGENT_OUTPUT({role}): {detail}")]
    AgentOutput { role: AgentRole, detail: String },
    #[error("E_UNREPAIRABLE: {} blocking violation(s) remain after {rounds} repair round(s)", .violations.iter().filter(|v| v.is_blocking()).count())]
    Unrepairable { rounds: u32, violations: Vec<Violation> },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl FlowError {
    pub fn code(&self) -> &'static str {
        match self {
            FlowError::Backend(_) => "E_BACKEND",
            FlowError::AgentOutput { .. } => "E_AGENT_OUTPUT",
            FlowError::Unrepairable { .. } => "E_UNREPAIRABLE",
            FlowError::Precondition(_) => "E_PRECONDITION",
        }
    }
}

/// One backend invocation, as recorded in the call log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCall {
    pub id: u64,
    pub role: AgentRole,
    pub attempt: u32,
    pub retry: u32,
}

/// Latest output of each content agent.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub story: StoryConcept,
    pub outputs: BTreeMap<AgentRole, Value>,
}

impl FlowState {
    pub fn new(story: StoryConcept) -> Self {
        FlowState { story, outputs: BTreeMap::new() }
    }

    /// Seeds the state from an existing blueprint, as if each agent had
    /// produced its part of it.
    pub fn from_blueprint(bp: &CinematicBlueprint) -> Self {
        let mut outputs = BTreeMap::new();
        let scenes: Vec<SceneSpec> =
            bp.scenes.iter().cloned().map(|s| SceneSpec { music_direction: None, ..s }).collect();
        let music: Vec<MusicCue> = bp
            .scenes
            .iter()
            .filter_map(|s| s.music_direction.clone().map(|d| MusicCue { scene_id: s.scene_id.clone(), direction: d }))
            .collect();
        let to_value = |v: Result<Value, serde_json::Error>| v.expect("fragment serializes");
        outputs.insert(
            AgentRole::CharacterDesigner,
            to_value(serde_json::to_value(CharactersFragment { characters: bp.characters.clone() })),
        );
        outputs.insert(AgentRole::ScriptWriter, to_value(serde_json::to_value(ScenesFragment { scenes })));
        outputs.insert(
            AgentRole::Storyteller,
            to_value(serde_json::to_value(DialogueFragment { dialogue: bp.dialogue.clone() })),
        );
        outputs.insert(AgentRole::Composer, to_value(serde_json::to_value(MusicFragment { music })));
        FlowState { story: bp.story.clone(), outputs }
    }

    fn fragment<T: DeserializeOwned>(&self, role: AgentRole) -> Option<T> {
        self.outputs.get(&role).and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    fn upstream_for(&self, role: AgentRole) -> BTreeMap<AgentRole, Value> {
        role.predecessors()
            .iter()
            .filter_map(|r| self.outputs.get(r).map(|v| (*r, v.clone())))
            .collect()
    }

    /// Merges the current fragments into a draft blueprint. Music cues for
    /// unknown scenes are dropped.
    pub fn blueprint(&self) -> CinematicBlueprint {
        let characters = self.fragment::<CharactersFragment>(AgentRole::CharacterDesigner).map(|f| f.characters);
        let mut scenes = self.fragment::<ScenesFragment>(AgentRole::ScriptWriter).map(|f| f.scenes).unwrap_or_default();
        let dialogue = self.fragment::<DialogueFragment>(AgentRole::Storyteller).map(|f| f.dialogue);
        let music = self.fragment::<MusicFragment>(AgentRole::Composer).map(|f| f.music).unwrap_or_default();
        for scene in &mut scenes {
            scene.music_direction =
                music.iter().find(|cue| cue.scene_id == scene.scene_id).map(|cue| cue.direction.clone());
        }
        CinematicBlueprint {
            schema_version: SCHEMA_VERSION,
            story: self.story.clone(),
            characters: characters.unwrap_or_default(),
            scenes,
            dialogue: dialogue.unwrap_or_default(),
        }
    }
}

/// Result of a full narrative run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub blueprint: CinematicBlueprint,
    /// Final inspection findings (warnings only on success). Empty when
    /// inspection is disabled.
    pub violations: Vec<Violation>,
    pub repair_rounds: u32,
    pub calls: Vec<AgentCall>,
}

fn normalize(role: AgentRole, value: Value) -> Result<Value, String> {
    fn through<T: DeserializeOwned + Serialize>(v: Value) -> Result<Value, String> {
        let typed: T = serde_json::from_value(v).map_err(|e| e.to_string())?;
        Ok(serde_json::to_value(typed).expect("fragment serializes"))
    }
    match role {
        AgentRole::CharacterDesigner => through::<CharactersFragment>(value),
        AgentRole::ScriptWriter => through::<ScenesFragment>(value),
        AgentRole::Storyteller => through::<DialogueFragment>(value),
        AgentRole::Composer => through::<MusicFragment>(value),
        AgentRole::QualityInspector => through::<InspectionFragment>(value),
    }
}

/// Role that produced the blueprint field at `path`.
fn owner_of_path(path: &str) -> AgentRole {
    if path.starts_with("characters") {
        AgentRole::CharacterDesigner
    } else if path.contains("music_direction") {
        AgentRole::Composer
    } else if path.starts_with("scenes") {
        AgentRole::ScriptWriter
    } else {
        AgentRole::Storyteller
    }
}

/// Drives agents against one backend and records every call.
pub struct AgentRunner<'a> {
    backend: &'a dyn TextBackend,
    config: &'a PipelineConfig,
    next_id: u64,
    calls: Vec<AgentCall>,
}

impl<'a> AgentRunner<'a> {
    pub fn new(backend: &'a dyn TextBackend, config: &'a PipelineConfig) -> Self {
        AgentRunner { backend, config, next_id: 1, calls: Vec::new() }
    }

    pub fn calls(&self) -> &[AgentCall] {
        &self.calls
    }

    pub fn into_calls(self) -> Vec<AgentCall> {
        self.calls
    }

    /// Invokes one agent and returns its normalized output fragment.
    pub fn run_agent(&mut self, ctx: &AgentContext) -> Result<Value, FlowError> {
        let expected: BTreeSet<AgentRole> = ctx.role.predecessors().iter().copied().collect();
        let present: BTreeSet<AgentRole> = ctx.upstream.keys().copied().collect();
        if expected != present {
            return Err(FlowError::AgentOutput {
                role: ctx.role,
                detail: format!("upstream has {present:?}, expected {expected:?}"),
            });
        }
        let tries = if self.config.strict { 1 } else { 1 + self.config.parse_retries };
        let mut detail = String::new();
        for retry in 0..tries {
            let id = self.next_id;
            self.next_id += 1;
            let payload = TextPayload {
                role: ctx.role,
                story: ctx.story.clone(),
                upstream: ctx.upstream.clone(),
                attempt: ctx.attempt,
                retry,
                feedback: ctx.feedback.clone(),
                settings: self.config.settings,
            };
            let request = BackendRequest {
                id,
                kind: BackendKind::Text.as_str().to_string(),
                payload: serde_json::to_value(&payload).expect("payload serializes"),
            };
            self.calls.push(AgentCall { id, role: ctx.role, attempt: ctx.attempt, retry });
            let response = self.backend.call(&request)?;
            let fragment = response.into_payload(id)?;
            match normalize(ctx.role, fragment) {
                Ok(v) => return Ok(v),
                Err(e) => detail = e,
            }
        }
        Err(FlowError::AgentOutput { role: ctx.role, detail })
    }

    fn run_content_agent(&mut self, state: &mut FlowState, role: AgentRole, attempt: u32, feedback: Vec<Violation>) -> Result<(), FlowError> {
        let ctx = AgentContext { role, upstream: state.upstream_for(role), story: state.story.clone(), attempt, feedback };
        let out = self.run_agent(&ctx)?;
        state.outputs.insert(role, out);
        Ok(())
    }

    /// Merges the draft, checks its structure, and runs the inspector agent
    /// plus the rule engine. Backend-reported findings are appended after the
    /// rule engine's, without duplicates.
    pub fn inspect(&mut self, state: &FlowState, attempt: u32) -> Result<(CinematicBlueprint, Vec<Violation>), FlowError> {
        let draft = state.blueprint();
        blueprint::check_structure(&draft).map_err(|e| {
            let role = match &e {
                BlueprintError::Schema { path, .. } => owner_of_path(path),
                _ => AgentRole::Storyteller,
            };
            FlowError::AgentOutput { role, detail: e.to_string() }
        })?;
        let ctx = AgentContext {
            role: AgentRole::QualityInspector,
            upstream: state.upstream_for(AgentRole::QualityInspector),
            story: state.story.clone(),
            attempt,
            feedback: vec![],
        };
        let report: InspectionFragment = serde_json::from_value(self.run_agent(&ctx)?).expect("normalized fragment");
        let mut violations = inspector::inspect(&draft, &state.story, self.config.relevance_threshold);
        for v in report.violations {
            if !violations.contains(&v) {
                violations.push(v);
            }
        }
        Ok((draft, violations))
    }

    /// Re-invokes the owners of blocking findings, in flow order, and
    /// re-inspects, for at most `max_repair_attempts` rounds.
    pub fn repair_loop(
        &mut self,
        state: &mut FlowState,
        violations: Vec<Violation>,
    ) -> Result<(CinematicBlueprint, Vec<Violation>, u32), FlowError> {
        if !inspector::has_blocking(&violations) {
            return Err(FlowError::Precondition("repair requested without blocking violations".into()));
        }
        let mut violations = violations;
        for round in 1..=self.config.max_repair_attempts {
            let owners: BTreeSet<AgentRole> =
                violations.iter().filter(|v| v.is_blocking()).map(|v| v.owner).collect();
            for role in AgentRole::FLOW.into_iter().filter(|r| *r != AgentRole::QualityInspector) {
                if owners.contains(&role) {
                    let feedback = violations.iter().filter(|v| v.owner == role).cloned().collect();
                    self.run_content_agent(state, role, round, feedback)?;
                }
            }
            let (draft, found) = self.inspect(state, round)?;
            if !inspector::has_blocking(&found) {
                return Ok((draft, found, round));
            }
            violations = found;
        }
        Err(FlowError::Unrepairable { rounds: self.config.max_repair_attempts, violations })
    }
}

/// Runs the full agent flow for one story.
pub fn run_pipeline(story: &StoryConcept, backend: &dyn TextBackend, config: &PipelineConfig) -> Result<PipelineOutcome, FlowError> {
    if story.text.trim().is_empty() {
        return Err(FlowError::Precondition("story text is blank".into()));
    }
    let mut runner = AgentRunner::new(backend, config);
    let mut state = FlowState::new(story.clone());
    for role in &AgentRole::FLOW[..4] {
        runner.run_content_agent(&mut state, *role, 0, vec![])?;
    }
    if !config.inspect {
        let blueprint = state.blueprint();
        blueprint::check_structure(&blueprint).map_err(|e| FlowError::AgentOutput {
            role: match &e {
                BlueprintError::Schema { path, .. } => owner_of_path(path),
                _ => AgentRole::Storyteller,
            },
            detail: e.to_string(),
        })?;
        return Ok(PipelineOutcome { blueprint, violations: vec![], repair_rounds: 0, calls: runner.into_calls() });
    }
    let (mut blueprint, mut violations) = runner.inspect(&state, 0)?;
    let mut repair_rounds = 0;
    if inspector::has_blocking(&violations) {
        (blueprint, violations, repair_rounds) = runner.repair_loop(&mut state, violations)?;
    }
    Ok(PipelineOutcome { blueprint, violations, repair_rounds, calls: runner.into_calls() })
}

/// Single-pass blueprint built straight from the story text, used when the
/// agent flow is disabled: one protagonist, three scenes, one line each.
pub fn template_blueprint(story: &StoryConcept, settings: SceneSettings) -> CinematicBlueprint {
    let text = story.text.trim();
    let h = hash_u64(&[b"template", text.as_bytes(), &story.seed.to_le_bytes()]);
    let protagonist = CharacterProfile {
        character_id: "protagonist".into(),
        name: "Protagonist".into(),
        appearance: BTreeMap::from([("description".to_string(), text.to_string())]),
        personality: BTreeMap::new(),
        behavioral_patterns: vec![],
        detection_keyword: "main character".into(),
        voice_spec: VoiceSpec { timbre_seed: h, base_pitch: Pitch::Mid, pace: Pace::Normal },
    };
    let frames = settings.frame_count;
    let slot = frames * 3 / 8;
    let budget = (slot * 4 / settings.fps.max(1)) as usize;
    let words: Vec<&str> = text.split_whitespace().take(budget.min(8)).collect();
    let mut scenes = Vec::new();
    let mut dialogue = Vec::new();
    for j in 0..3u64 {
        let scene_id = format!("scene_{}", j + 1);
        scenes.push(SceneSpec {
            scene_id: scene_id.clone(),
            visual_description: text.to_string(),
            character_ids: vec!["protagonist".into()],
            camera_notes: "static wide shot".into(),
            frame_count: frames,
            fps: settings.fps,
            emotional_tone: "neutral".into(),
            music_direction: Some(MusicDirection {
                mood: "neutral".into(),
                intensity: 0.5,
                motif_seed: h.wrapping_add(j),
            }),
        });
        if slot > 0 && !words.is_empty() {
            let start = frames / 12;
            dialogue.push(DialogueLine {
                scene_id,
                character_id: "protagonist".into(),
                text: words.join(" "),
                frame_range: FrameRange { start, end: start + slot },
                emotion: "neutral".into(),
            });
        }
    }
    CinematicBlueprint { schema_version: SCHEMA_VERSION, story: story.clone(), characters: vec![protagonist], scenes, dialogue }
}
