//! Inputs shared by the benchmarks.

use std::collections::BTreeMap;

use storyreel_core::blueprint::{Pace, Pitch, SCHEMA_VERSION};
use storyreel_core::{
    CharacterProfile, CinematicBlueprint, DialogueLine, FrameRange, MusicDirection, SceneSpec, StoryConcept,
    VoiceSpec,
};

fn character(i: usize) -> CharacterProfile {
    CharacterProfile {
        character_id: format!("c{i}"),
        name: format!("Character {i}"),
        appearance: BTreeMap::from([("hair".into(), "short".into())]),
        personality: BTreeMap::new(),
        behavioral_patterns: vec![],
        detection_keyword: format!("person number {i}"),
        voice_spec: VoiceSpec { timbre_seed: i as u64, base_pitch: Pitch::Mid, pace: Pace::Normal },
    }
}

/// A blueprint with `scenes` scenes of three characters and two lines
/// each.
pub fn blueprint(scenes: usize) -> CinematicBlueprint {
    let characters: Vec<CharacterProfile> = (0..3).map(character).collect();
    let scene_specs = (0..scenes)
        .map(|j| SceneSpec {
            scene_id: format!("s{j}"),
            visual_description: "a harbor at dusk".into(),
            character_ids: characters.iter().map(|c| c.character_id.clone()).collect(),
            camera_notes: "wide".into(),
            frame_count: 129,
            fps: 24,
            emotional_tone: "calm".into(),
            music_direction: Some(MusicDirection { mood: "warm".into(), intensity: 0.5, motif_seed: j as u64 }),
        })
        .collect::<Vec<_>>();
    let dialogue = scene_specs
        .iter()
        .flat_map(|s| {
            [(0, 10, 58), (1, 64, 112)].map(|(c, start, end)| DialogueLine {
                scene_id: s.scene_id.clone(),
                character_id: format!("c{c}"),
                text: "we should leave before the tide".into(),
                frame_range: FrameRange { start, end },
                emotion: "calm".into(),
            })
        })
        .collect();
    CinematicBlueprint {
        schema_version: SCHEMA_VERSION,
        story: StoryConcept::new("friends leave the harbor before the tide", 1),
        characters,
        scenes: scene_specs,
        dialogue,
    }
}
