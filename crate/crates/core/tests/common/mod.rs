//! Fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use storyreel_core::agentflow::{run_pipeline, PipelineConfig};
use storyreel_core::blueprint::{Genre, Pace, Pitch, SCHEMA_VERSION};
use storyreel_core::{
    CharacterProfile, CinematicBlueprint, DialogueLine, FrameRange, MockBackend, MusicDirection, RuleCode, SceneSpec,
    StoryConcept, VoiceSpec,
};
use proptest::prelude::*;

pub const GOLDEN_STORY: &str = include_str!("../../../../fixtures/stories/golden.txt");

pub fn profile(id: &str, name: &str, keyword: &str) -> CharacterProfile {
    CharacterProfile {
        character_id: id.into(),
        name: name.into(),
        appearance: BTreeMap::from([("hair".into(), "dark".into()), ("attire".into(), keyword.into())]),
        personality: BTreeMap::from([("temperament".into(), "wary".into())]),
        behavioral_patterns: vec!["paces by the window".into()],
        detection_keyword: keyword.into(),
        voice_spec: VoiceSpec { timbre_seed: id.len() as u64 * 31, base_pitch: Pitch::Mid, pace: Pace::Normal },
    }
}

pub fn scene(id: &str, chars: &[&str], description: &str) -> SceneSpec {
    SceneSpec {
        scene_id: id.into(),
        visual_description: description.into(),
        character_ids: chars.iter().map(|c| c.to_string()).collect(),
        camera_notes: "slow push in".into(),
        frame_count: 129,
        fps: 24,
        emotional_tone: "tender".into(),
        music_direction: Some(MusicDirection { mood: "warm".into(), intensity: 0.5, motif_seed: 3 }),
    }
}

pub fn line(scene: &str, who: &str, text: &str, start: u32, end: u32) -> DialogueLine {
    DialogueLine {
        scene_id: scene.into(),
        character_id: who.into(),
        text: text.into(),
        frame_range: FrameRange { start, end },
        emotion: "calm".into(),
    }
}

pub fn base_story() -> StoryConcept {
    StoryConcept::new("Two sisters reunite at the lighthouse before the winter storm", 7)
}

/// A blueprint with no findings at all.
pub fn clean_blueprint() -> CinematicBlueprint {
    CinematicBlueprint {
        schema_version: SCHEMA_VERSION,
        story: base_story(),
        characters: vec![
            profile("mara", "Mara", "woman in yellow raincoat"),
            profile("lena", "Lena", "woman in grey shawl"),
        ],
        scenes: vec![
            scene("arrival", &["mara", "lena"], "two sisters reunite at the lighthouse door"),
            scene("storm", &["lena"], "the winter storm hits the lighthouse"),
        ],
        dialogue: vec![
            line("arrival", "mara", "You came back", 10, 58),
            line("arrival", "lena", "The lighthouse called me", 64, 112),
            line("storm", "lena", "Hold the lamp steady", 20, 68),
        ],
    }
}

/// A mutated blueprint with the findings it must produce, as
/// `(code, path)` in report order.
pub struct MutationFixture {
    pub name: &'static str,
    pub blueprint: CinematicBlueprint,
    pub story: StoryConcept,
    pub expected: Vec<(RuleCode, &'static str)>,
}

fn mutate(
    name: &'static str,
    expected: Vec<(RuleCode, &'static str)>,
    f: impl FnOnce(&mut CinematicBlueprint, &mut StoryConcept),
) -> MutationFixture {
    let mut blueprint = clean_blueprint();
    let mut story = base_story();
    f(&mut blueprint, &mut story);
    MutationFixture { name, blueprint, story, expected }
}

pub fn mutation_fixtures() -> Vec<MutationFixture> {
    use RuleCode::*;
    vec![
        mutate("scene_ref", vec![(RefCharacter, "scenes[1].character_ids[1]")], |bp, _| {
            bp.scenes[1].character_ids.push("ghost".into());
        }),
        mutate("dialogue_ref", vec![(RefCharacter, "dialogue[2].character_id")], |bp, _| {
            bp.dialogue[2].character_id = "ghost".into();
        }),
        mutate("overflow", vec![(TimingOverflow, "dialogue[1].frame_range")], |bp, _| {
            bp.dialogue[1].frame_range = FrameRange { start: 100, end: 140 };
        }),
        mutate("self_overlap", vec![(TimingSelfOverlap, "dialogue[3].frame_range")], |bp, _| {
            bp.dialogue.push(line("storm", "lena", "And again", 60, 90));
        }),
        mutate("keyword_missing", vec![(KeywordMissing, "characters[0].detection_keyword")], |bp, _| {
            bp.characters[0].detection_keyword = "  ".into();
        }),
        mutate("keyword_collision", vec![(KeywordCollision, "characters[1].detection_keyword")], |bp, _| {
            bp.characters[0].detection_keyword = "man in red coat".into();
            bp.characters[1].detection_keyword = "Man in  red coat".into();
        }),
        mutate("music_missing", vec![(MusicMissing, "scenes[0].music_direction")], |bp, _| {
            bp.scenes[0].music_direction = None;
        }),
        mutate("empty_scene", vec![(EmptyScene, "scenes[2]")], |bp, _| {
            bp.scenes.push(scene("coda", &[], "the lighthouse lamp goes dark"));
        }),
        mutate("fps_mismatch", vec![(FpsMismatch, "scenes[1].fps")], |bp, _| {
            bp.scenes[1].fps = 25;
        }),
        mutate("unused_character", vec![(UnusedCharacter, "characters[2]")], |bp, _| {
            bp.characters.push(profile("pim", "Pim", "boy in green cap"));
        }),
        mutate("irrelevant", vec![(Irrelevant, "story.text")], |_, story| {
            story.text = "A robot astronaut repairs a satellite orbiting Jupiter".into();
        }),
        mutate(
            "overflow_and_music",
            vec![(TimingOverflow, "dialogue[2].frame_range"), (MusicMissing, "scenes[1].music_direction")],
            |bp, _| {
                bp.dialogue[2].frame_range = FrameRange { start: 120, end: 130 };
                bp.scenes[1].music_direction = None;
            },
        ),
        mutate(
            "collision_and_unused",
            vec![(KeywordCollision, "characters[2].detection_keyword"), (UnusedCharacter, "characters[2]")],
            |bp, _| {
                bp.characters.push(profile("pim", "Pim", "woman in yellow raincoat"));
            },
        ),
        mutate(
            "ref_and_overlap",
            vec![(RefCharacter, "dialogue[0].character_id"), (TimingSelfOverlap, "dialogue[3].frame_range")],
            |bp, _| {
                bp.dialogue[0].character_id = "ghost".into();
                bp.dialogue.push(line("arrival", "lena", "Wait", 100, 120));
            },
        ),
        mutate(
            "fps_and_empty",
            vec![(EmptyScene, "scenes[2]"), (FpsMismatch, "scenes[2].fps")],
            |bp, _| {
                let mut s = scene("coda", &[], "the lighthouse lamp goes dark");
                s.fps = 30;
                bp.scenes.push(s);
            },
        ),
    ]
}

/// Story prompts for the valid corpus.
pub const CORPUS_STORIES: [&str; 10] = [
    "Two estranged sisters reunite at their late father's lighthouse",
    "An aging jazz pianist teaches a runaway teenager to play",
    "A mountain rescue pilot searches for a missing hiker in the first snow",
    "Two rival street musicians discover they share a mentor",
    "A night-shift nurse befriends a patient who remembers the war",
    "A baker and a retired detective find a hidden love letter",
    "A grandmother teaches her grandson to sail before the summer ends",
    "A lighthouse keeper and a stranded sailor wait out a storm",
    "Twin brothers compete for the last spot on the rowing team",
    "A widowed farmer and his daughter rebuild the barn after a fire",
];

/// Twenty inspector-clean blueprints produced by the mock agent flow.
pub fn valid_corpus() -> Vec<CinematicBlueprint> {
    let mut out = Vec::new();
    for (i, text) in CORPUS_STORIES.iter().enumerate() {
        for seed in [i as u64, 100 + i as u64] {
            let story = StoryConcept::new(*text, seed);
            let mock = MockBackend::new(seed);
            let outcome = run_pipeline(&story, &mock, &PipelineConfig::default()).expect("mock flow succeeds");
            out.push(outcome.blueprint);
        }
    }
    out
}

fn token() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,7}"
}

fn free_text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ,.!?'\"\\\\é漢-]{1,24}".prop_filter("non-blank", |s| !s.trim().is_empty())
}

/// Blueprints that satisfy every structural and reference invariant, with
/// arbitrary content.
pub fn arb_blueprint() -> impl Strategy<Value = CinematicBlueprint> {
    let character = (token(), free_text(), free_text(), any::<u64>(), 0usize..3, 0usize..3);
    let chars = prop::collection::btree_map(token(), character, 1..4);
    let fps = prop::sample::select(vec![12u32, 24, 25, 30]);
    (chars, fps, 1usize..4, free_text(), any::<u64>(), prop::option::of(0usize..5))
        .prop_flat_map(|(chars, fps, scene_count, story_text, seed, genre)| {
            let characters: Vec<CharacterProfile> = chars
                .into_iter()
                .map(|(id, (_, name, kw, timbre, pitch, pace))| CharacterProfile {
                    character_id: id,
                    name,
                    appearance: BTreeMap::from([("face".into(), "angular".into())]),
                    personality: BTreeMap::new(),
                    behavioral_patterns: vec![],
                    detection_keyword: kw,
                    voice_spec: VoiceSpec {
                        timbre_seed: timbre,
                        base_pitch: [Pitch::Low, Pitch::Mid, Pitch::High][pitch],
                        pace: [Pace::Slow, Pace::Normal, Pace::Fast][pace],
                    },
                })
                .collect();
            let n = characters.len();
            let scenes = prop::collection::vec(
                (
                    free_text(),
                    prop::sample::subsequence((0..n).collect::<Vec<_>>(), 0..=n),
                    1u32..200,
                    prop::option::of((0.0f64..=1.0, any::<u64>())),
                ),
                scene_count,
            );
            let genre = genre.map(|g| [Genre::Romance, Genre::Action, Genre::Drama, Genre::Family, Genre::Suspense][g]);
            (Just(characters), scenes, Just(fps), Just(StoryConcept { text: story_text, genre_hint: genre, seed }))
        })
        .prop_flat_map(|(characters, scenes, fps, story)| {
            let scenes: Vec<SceneSpec> = scenes
                .into_iter()
                .enumerate()
                .map(|(j, (desc, members, frames, music))| SceneSpec {
                    scene_id: format!("s{j}"),
                    visual_description: desc,
                    character_ids: members.iter().map(|&i| characters[i].character_id.clone()).collect(),
                    camera_notes: "static".into(),
                    frame_count: frames,
                    fps,
                    emotional_tone: "even".into(),
                    music_direction: music.map(|(intensity, motif_seed)| MusicDirection {
                        mood: "calm".into(),
                        intensity,
                        motif_seed,
                    }),
                })
                .collect();
            let slots: Vec<(String, u32)> = scenes.iter().map(|s| (s.scene_id.clone(), s.frame_count)).collect();
            let ids: Vec<String> = characters.iter().map(|c| c.character_id.clone()).collect();
            let lines = prop::collection::vec(
                (0..slots.len(), 0..ids.len(), free_text(), any::<(u32, u32)>()),
                0..5,
            )
            .prop_map(move |raw| {
                raw.into_iter()
                    .map(|(s, c, text, (a, b))| {
                        let frames = slots[s].1;
                        let start = a % frames;
                        let end = start + 1 + b % (frames - start);
                        line(&slots[s].0, &ids[c], &text, start, end)
                    })
                    .collect::<Vec<_>>()
            });
            (Just(characters), Just(scenes), lines, Just(story))
        })
        .prop_map(|(characters, scenes, dialogue, story)| CinematicBlueprint {
            schema_version: SCHEMA_VERSION,
            story,
            characters,
            scenes,
            dialogue,
        })
}

use storyreel_core::assets::{portrait_source_hash, voice_source_hash};
use storyreel_core::backend::SceneVideoRequest;
use storyreel_core::integration::{CastMember, SpokenLine};
use storyreel_core::{Backends, PortraitAsset, VideoClip, VoiceLineAsset};

/// Everything `integrate_scene` needs for one scene, built straight from
/// the backends.
pub struct SceneKit {
    pub clip: VideoClip,
    pub profiles: Vec<CharacterProfile>,
    pub portraits: Vec<PortraitAsset>,
    pub voices: Vec<(FrameRange, VoiceLineAsset)>,
}

impl SceneKit {
    pub fn build(bp: &CinematicBlueprint, scene_index: usize, backends: &Backends, width: u32, height: u32) -> Self {
        let scene = &bp.scenes[scene_index];
        let clip = backends
            .video
            .render_scene(&SceneVideoRequest {
                scene_id: scene.scene_id.clone(),
                prompt: scene.visual_description.clone(),
                frame_count: scene.frame_count,
                fps: scene.fps,
                width,
                height,
                seed: bp.story.seed,
            })
            .unwrap();
        let profiles: Vec<CharacterProfile> =
            scene.character_ids.iter().map(|id| bp.character(id).unwrap().clone()).collect();
        let portraits = profiles
            .iter()
            .map(|p| PortraitAsset {
                character_id: p.character_id.clone(),
                image: backends.portrait.portrait(p, bp.story.seed).unwrap(),
                source_hash: portrait_source_hash(p, bp.story.seed),
            })
            .collect();
        let voices = bp
            .dialogue
            .iter()
            .enumerate()
            .filter(|(_, d)| d.scene_id == scene.scene_id)
            .filter_map(|(k, d)| {
                let range = d.clipped_range(scene.frame_count)?;
                let profile = bp.character(&d.character_id).unwrap();
                let audio = backends.tts.synthesize(&profile.voice_spec, &d.text, &d.emotion).unwrap();
                let voice = VoiceLineAsset {
                    character_id: d.character_id.clone(),
                    dialogue_index: k,
                    audio,
                    emotion: d.emotion.clone(),
                    source_hash: voice_source_hash(profile, d),
                };
                Some((range, voice))
            })
            .collect();
        SceneKit { clip, profiles, portraits, voices }
    }

    pub fn cast(&self) -> Vec<CastMember<'_>> {
        self.profiles.iter().zip(&self.portraits).map(|(profile, portrait)| CastMember { profile, portrait }).collect()
    }

    pub fn lines(&self) -> Vec<SpokenLine<'_>> {
        self.voices
            .iter()
            .map(|(range, voice)| SpokenLine { character_id: &voice.character_id, range: *range, voice })
            .collect()
    }
}

/// The clean blueprint with a third character sharing the first scene.
pub fn three_character_blueprint() -> CinematicBlueprint {
    let mut bp = clean_blueprint();
    bp.characters.push(profile("otto", "Otto", "old man with lantern"));
    bp.scenes[0].character_ids.push("otto".into());
    bp.dialogue.push(line("arrival", "otto", "Storm is near", 30, 80));
    bp
}

use std::sync::Arc;

use storyreel_core::backend::{BackendError, FaceSwapBackend, LipSyncBackend};
use storyreel_core::integration::{integrate_scene, segment_characters};
use storyreel_core::media::{clip_digest, read_frames_dir};
use storyreel_core::{AudioTrack, MaskSequence, Raster};

/// Integrates one scene and checks both locality properties against the
/// pre-integration clip and the stored post-swap clip.
pub fn check_scene_locality(
    bp: &CinematicBlueprint,
    scene: usize,
    width: u32,
    height: u32,
) -> Result<(), String> {
    let backends = Backends::mock(bp.story.seed);
    let kit = SceneKit::build(bp, scene, &backends, width, height);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (out, trace) = integrate_scene(&kit.clip, &kit.cast(), &kit.lines(), &backends, Some(dir.path()))
        .map_err(|e| e.to_string())?;
    let swapped = read_frames_dir(&dir.path().join("swapped"), kit.clip.frame_count(), kit.clip.fps)
        .map_err(|e| e.to_string())?;
    if trace.swapped != clip_digest(&swapped) || trace.talking != clip_digest(&out) {
        return Err(format!("scene {scene}: trace does not match stored intermediates"));
    }
    let reqs: Vec<(String, String)> =
        kit.profiles.iter().map(|p| (p.character_id.clone(), p.detection_keyword.clone())).collect();
    let union = segment_characters(&kit.clip, &reqs, backends.segmentation.as_ref())
        .map_err(|e| e.to_string())?
        .union(width, height, kit.clip.frame_count());

    let mut changed = 0usize;
    for f in 0..out.frame_count() {
        for (p, &masked) in union.frames[f].iter().enumerate() {
            let (a, b) = (&kit.clip.frames[f][p * 3..p * 3 + 3], &out.frames[f][p * 3..p * 3 + 3]);
            if masked {
                changed += (a != b) as usize;
            } else if a != b {
                return Err(format!("scene {scene} frame {f} pixel {p} changed outside every mask"));
            }
        }
        let spoken = kit.voices.iter().any(|(r, _)| r.contains(f as u32));
        if !spoken && out.frames[f] != swapped.frames[f] {
            return Err(format!("scene {scene} frame {f} differs from the post-swap clip without dialogue"));
        }
    }
    if !kit.profiles.is_empty() && changed == 0 {
        return Err(format!("integration left scene {scene} untouched"));
    }
    Ok(())
}

/// Where an adversarial backend plants its stray edit.
#[derive(Clone, Copy, Debug)]
pub enum Leak {
    SwapOutsideMask,
    LipsyncOutsideMask,
    LipsyncOutsideRange,
}

pub const LEAKS: [Leak; 3] = [Leak::SwapOutsideMask, Leak::LipsyncOutsideMask, Leak::LipsyncOutsideRange];

/// Wraps the mock and corrupts one seed-chosen pixel it may not touch.
pub struct Adversary {
    inner: MockBackend,
    leak: Leak,
    seed: u64,
    delta: u8,
}

fn pick_unmasked(mask: &[bool], seed: u64) -> usize {
    let n = mask.len();
    let start = seed as usize % n;
    (0..n).map(|i| (start + i) % n).find(|&p| !mask[p]).expect("an unmasked pixel")
}

impl FaceSwapBackend for Adversary {
    fn swap(&self, clip: &VideoClip, masks: &MaskSequence, portrait: &Raster) -> Result<VideoClip, BackendError> {
        let mut out = self.inner.swap(clip, masks, portrait)?;
        if let Leak::SwapOutsideMask = self.leak {
            let f = (self.seed >> 32) as usize % clip.frame_count();
            let p = pick_unmasked(&masks.frames[f], self.seed);
            out.frames[f][p * 3 + (self.seed % 3) as usize] ^= self.delta;
        }
        Ok(out)
    }
}

impl LipSyncBackend for Adversary {
    fn lipsync(
        &self,
        clip: &VideoClip,
        masks: &MaskSequence,
        audio: &AudioTrack,
        range: FrameRange,
    ) -> Result<VideoClip, BackendError> {
        let mut out = self.inner.lipsync(clip, masks, audio, range)?;
        match self.leak {
            Leak::LipsyncOutsideMask => {
                let f = range.start as usize + ((self.seed >> 32) % range.len() as u64) as usize;
                let p = pick_unmasked(&masks.frames[f], self.seed);
                out.frames[f][p * 3] ^= self.delta;
            }
            Leak::LipsyncOutsideRange => {
                let outside: Vec<usize> = (0..clip.frame_count()).filter(|f| !range.contains(*f as u32)).collect();
                let f = outside[(self.seed >> 32) as usize % outside.len()];
                let p = self.seed as usize % masks.frames[f].len();
                out.frames[f][p * 3 + 2] ^= self.delta;
            }
            Leak::SwapOutsideMask => {}
        }
        Ok(out)
    }
}

/// Mock backends with one adversarial stage.
pub fn adversarial(leak: Leak, seed: u64, delta: u8) -> Backends {
    let mut backends = Backends::mock(7);
    let adv = Arc::new(Adversary { inner: MockBackend::new(7), leak, seed, delta });
    match leak {
        Leak::SwapOutsideMask => backends.faceswap = adv,
        _ => backends.lipsync = adv,
    }
    backends
}
