//! Movie-generation engine: agent-driven story planning, character assets,
//! decoupled character integration and deterministic audiovisual assembly,
//! with every generative model behind a pluggable backend.

pub mod agentflow;
pub mod assembly;
pub mod assets;
pub mod backend;
pub mod blueprint;
pub mod canonical;
pub mod inspector;
pub mod integration;
pub mod media;
pub mod pipeline;

pub use agentflow::{AgentRole, FlowError, PipelineConfig, PipelineOutcome};
pub use assembly::{ProjectManifest, SceneRender, SubtitleEntry};
pub use assets::{AssetRegistry, PortraitAsset, VoiceLineAsset};
pub use backend::{BackendKind, BackendUris, Backends, MockBackend, MockFault};
pub use blueprint::{
    parse_blueprint, serialize_blueprint, CharacterProfile, CinematicBlueprint, DialogueLine, MusicDirection,
    SceneSpec, StoryConcept, VoiceSpec,
};
pub use inspector::{RuleCode, Severity, Violation};
pub use media::{AudioTrack, FrameRange, MaskSequence, Raster, SampleRange, VideoClip, SAMPLE_RATE};
pub use pipeline::{RunConfig, RunError, RunOutcome};
