//! Deterministic in-process backend for every model kind.
//!
//! Text output is drawn from parameterized templates selected by hashes of
//! the request; media output is simple geometry and tones whose parameters
//! are hashes of the inputs. Every response is a pure function of the
//! request and the mock seed. Fault flags inject specific misbehaviour for
//! tests of the engine's error handling.

use std::f64::consts::PI;

use serde_json::Value;

use super::{
    BackendError, BackendRequest, BackendResponse, FaceSwapBackend, LipSyncBackend, MusicBackend, PortraitBackend,
    SceneVideoRequest, SegmentationBackend, TextBackend, TtsBackend, VideoBackend,
};
use crate::agentflow::{
    AgentRole, CharactersFragment, DialogueFragment, InspectionFragment, MusicCue, MusicFragment, ScenesFragment,
    TextPayload,
};
use crate::blueprint::{
    CharacterProfile, DialogueLine, MusicDirection, Pace, Pitch, SceneSpec, VoiceSpec,
};
use crate::canonical::{self, hash_u64};
use crate::inspector::content_words;
use crate::media::{
    frame_range_to_sample_range, AudioTrack, FrameRange, MaskSequence, Raster, VideoClip, SAMPLE_RATE,
};

/// Length of one spoken word in the mock voice model.
pub const WORD_SAMPLES: usize = SAMPLE_RATE as usize / 4;
/// Length of the mock music motif (two seconds).
pub const MOTIF_SAMPLES: usize = 2 * SAMPLE_RATE as usize;
pub const PORTRAIT_SIZE: u32 = 512;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MockFault {
    /// Storyteller's first draft ends one line past its scene.
    OverflowDialogue,
    /// Like `OverflowDialogue`, but repairs never fix it.
    OverflowDialogueSticky,
    /// Unparseable output from a role on its first parse attempt.
    Garbage(AgentRole),
    /// Unparseable output from a role on every attempt.
    GarbageAlways(AgentRole),
    /// Segmentation finds nothing for this character id.
    Miss(String),
    /// Face swap edits one pixel outside the mask.
    LeakySwap,
    /// Lip sync edits one pixel outside its frame range.
    LeakyLipsync,
    /// Portraits come back at 256x256.
    SmallPortrait,
}

impl MockFault {
    pub fn parse(flag: &str) -> Option<Self> {
        Some(match flag {
            "overflow_dialogue" => MockFault::OverflowDialogue,
            "overflow_dialogue_sticky" => MockFault::OverflowDialogueSticky,
            "leaky_swap" => MockFault::LeakySwap,
            "leaky_lipsync" => MockFault::LeakyLipsync,
            "small_portrait" => MockFault::SmallPortrait,
            other => {
                let (name, arg) = other.split_once(':')?;
                match name {
                    "garbage" => MockFault::Garbage(AgentRole::parse(arg)?),
                    "garbage_always" => MockFault::GarbageAlways(AgentRole::parse(arg)?),
                    "miss" if !arg.is_empty() => MockFault::Miss(arg.to_string()),
                    _ => return None,
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockBackend {
    seed: u64,
    faults: Vec<MockFault>,
}

const FIRST_NAMES: &[&str] = &[
    "Ava", "Bruno", "Chen", "Dalia", "Elio", "Farah", "Gus", "Hana", "Ivo", "Juno", "Kai", "Lena", "Milo", "Nia",
    "Omar", "Pia", "Quinn", "Rosa", "Sami", "Tova", "Uri", "Vera", "Wes", "Yara",
];
const SURNAMES: &[&str] = &[
    "Abara", "Brandt", "Castellano", "Dorsey", "Eklund", "Fontaine", "Grady", "Holm", "Ishikawa", "Jovic",
    "Kowal", "Lindqvist", "Moreau", "Novak", "Okafor", "Petrov",
];
const HAIR: &[&str] = &["short black hair", "long auburn hair", "silver buzz cut", "curly brown hair", "blond braid"];
const FACE: &[&str] = &["angular face", "round freckled face", "weathered face", "soft oval face"];
const BUILD: &[&str] = &["tall and wiry", "broad-shouldered", "slight", "sturdy", "lanky"];
const COLORS: &[&str] = &["red", "yellow", "green", "blue", "grey", "orange", "white", "purple"];
const GARMENTS: &[&str] = &["raincoat", "jacket", "sweater", "overcoat", "hoodie"];
const TEMPERS: &[&str] = &["guarded", "warm", "impulsive", "wry", "earnest"];
const HABITS: &[&str] = &[
    "fidgets with a ring",
    "avoids eye contact",
    "laughs too loudly",
    "hums when thinking",
    "checks the time",
    "speaks in short bursts",
];
const SETTINGS: &[&str] = &[
    "a crowded train platform at dusk",
    "a small kitchen lit by one lamp",
    "a windswept pier",
    "a quiet hospital corridor",
    "a rooftop garden after rain",
    "a neon-lit diner",
];
const CAMERA: &[&str] = &["slow dolly in", "static wide shot", "handheld close-up", "over-the-shoulder two-shot"];
const TONES: &[&str] = &["tender", "tense", "hopeful", "melancholic", "playful"];
const LINES: &[&str] = &[
    "I kept thinking about {topic} every single day since",
    "You came back because of {topic} didn't you",
    "Nobody told me {topic} would feel like this",
    "Let's not talk about {topic} tonight please just stay",
    "Tell me the truth about {topic} before it rains",
];

fn pick<'a>(list: &[&'a str], h: u64) -> &'a str {
    list[(h % list.len() as u64) as usize]
}

fn truncate_words(text: &str, max: usize) -> String {
    text.split_whitespace().take(max).collect::<Vec<_>>().join(" ")
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend { seed, faults: Vec::new() }
    }

    pub fn with_faults(seed: u64, faults: Vec<MockFault>) -> Self {
        MockBackend { seed, faults }
    }

    pub fn has(&self, fault: &MockFault) -> bool {
        self.faults.contains(fault)
    }

    fn key(&self, p: &TextPayload, tag: &str, i: u64) -> u64 {
        hash_u64(&[
            tag.as_bytes(),
            &self.seed.to_le_bytes(),
            &p.story.seed.to_le_bytes(),
            p.story.text.as_bytes(),
            &i.to_le_bytes(),
        ])
    }

    fn topic(p: &TextPayload) -> String {
        let words: Vec<String> = content_words(&p.story.text).into_iter().collect();
        if words.is_empty() {
            "the story".to_string()
        } else {
            words.join(" ")
        }
    }

    /// Role output for a text request, or `None` when the payload is not a
    /// text request at all.
    pub fn text_fragment(&self, p: &TextPayload) -> Value {
        let garbage = (self.has(&MockFault::Garbage(p.role)) && p.retry == 0)
            || self.has(&MockFault::GarbageAlways(p.role));
        if garbage {
            return Value::String("Sure! Here is a lovely story outline for you.".into());
        }
        let fragment = match p.role {
            AgentRole::CharacterDesigner => serde_json::to_value(self.characters(p)),
            AgentRole::ScriptWriter => serde_json::to_value(self.scenes(p)),
            AgentRole::Storyteller => serde_json::to_value(self.dialogue(p)),
            AgentRole::Composer => serde_json::to_value(self.music(p)),
            AgentRole::QualityInspector => serde_json::to_value(InspectionFragment { violations: vec![] }),
        };
        fragment.expect("fragment serializes")
    }

    fn characters(&self, p: &TextPayload) -> CharactersFragment {
        let count = 2 + self.key(p, "cast", 0) % 2;
        let color_base = self.key(p, "color", 0);
        let topic = Self::topic(p);
        let characters = (0..count)
            .map(|i| {
                let k = |tag: &str| self.key(p, tag, i);
                let first = pick(FIRST_NAMES, k("first"));
                let color = COLORS[((color_base + i) % COLORS.len() as u64) as usize];
                let garment = pick(GARMENTS, k("garment"));
                let build = pick(BUILD, k("build"));
                CharacterProfile {
                    character_id: format!("{}_{}", first.to_lowercase(), i + 1),
                    name: format!("{first} {}", pick(SURNAMES, k("last"))),
                    appearance: [
                        ("hair", pick(HAIR, k("hair")).to_string()),
                        ("face", pick(FACE, k("face")).to_string()),
                        ("build", build.to_string()),
                        ("attire", format!("{color} {garment}")),
                    ]
                    .into_iter()
                    .map(|(a, b)| (a.to_string(), b))
                    .collect(),
                    personality: [
                        ("temperament".to_string(), pick(TEMPERS, k("temper")).to_string()),
                        ("motivation".to_string(), format!("haunted by {topic}")),
                    ]
                    .into_iter()
                    .collect(),
                    behavioral_patterns: vec![
                        pick(HABITS, k("habit_a")).to_string(),
                        pick(HABITS, k("habit_b") / 7).to_string(),
                    ],
                    detection_keyword: format!("person in {color} {garment}"),
                    voice_spec: VoiceSpec {
                        timbre_seed: k("timbre"),
                        base_pitch: [Pitch::Low, Pitch::Mid, Pitch::High][(k("pitch") % 3) as usize],
                        pace: [Pace::Slow, Pace::Normal, Pace::Fast][(k("pace") % 3) as usize],
                    },
                }
            })
            .collect();
        CharactersFragment { characters }
    }

    fn scenes(&self, p: &TextPayload) -> ScenesFragment {
        let cast: Vec<String> = p
            .upstream_as::<CharactersFragment>(AgentRole::CharacterDesigner)
            .map(|f| f.characters.into_iter().map(|c| c.character_id).collect())
            .unwrap_or_default();
        let count = 2 + self.key(p, "scene_count", 0) % 3;
        let story = p.story.text.trim();
        let scenes = (0..count)
            .map(|j| {
                let k = |tag: &str| self.key(p, tag, j);
                let character_ids = if j == 0 || cast.is_empty() {
                    cast.clone()
                } else {
                    let subset: Vec<String> = cast
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| self.key(p, "cast_in", j * 16 + *i as u64).is_multiple_of(2))
                        .map(|(_, c)| c.clone())
                        .collect();
                    if subset.is_empty() {
                        vec![cast[(j as usize) % cast.len()].clone()]
                    } else {
                        subset
                    }
                };
                SceneSpec {
                    scene_id: format!("scene_{}", j + 1),
                    visual_description: format!("{}; beat {} of {story}", pick(SETTINGS, k("setting")), j + 1),
                    character_ids,
                    camera_notes: pick(CAMERA, k("camera")).to_string(),
                    frame_count: p.settings.frame_count,
                    fps: p.settings.fps,
                    emotional_tone: pick(TONES, k("tone")).to_string(),
                    music_direction: None,
                }
            })
            .collect();
        ScenesFragment { scenes }
    }

    fn dialogue(&self, p: &TextPayload) -> DialogueFragment {
        let scenes = p.upstream_as::<ScenesFragment>(AgentRole::ScriptWriter).map(|f| f.scenes).unwrap_or_default();
        let topic = Self::topic(p);
        // Longest content word, earliest alphabetically on ties.
        let topic_word = topic
            .split_whitespace()
            .fold("", |best, w| if w.len() > best.len() { w } else { best })
            .to_string();
        let mut dialogue = Vec::new();
        let overflow = (self.has(&MockFault::OverflowDialogue) && p.attempt == 0)
            || self.has(&MockFault::OverflowDialogueSticky);
        let mut overflow_done = false;
        for (j, scene) in scenes.iter().enumerate() {
            let frames = scene.frame_count;
            let fps = scene.fps.max(1);
            let slot = frames * 3 / 8;
            let budget = (slot * 4 / fps) as usize;
            if scene.character_ids.is_empty() || budget == 0 {
                continue;
            }
            let starts = [frames / 12, frames / 2];
            for (l, &start) in starts.iter().enumerate() {
                let speaker = &scene.character_ids[l % scene.character_ids.len()];
                let template = pick(LINES, self.key(p, "line", (j * 2 + l) as u64));
                let mut line = DialogueLine {
                    scene_id: scene.scene_id.clone(),
                    character_id: speaker.clone(),
                    text: truncate_words(&template.replace("{topic}", &topic_word), budget.min(8)),
                    frame_range: FrameRange { start, end: start + slot },
                    emotion: scene.emotional_tone.clone(),
                };
                if overflow && !overflow_done && l == 1 && frames >= 60 {
                    line.frame_range = FrameRange { start: frames - 29, end: frames + 11 };
                    line.text = "We will meet again".to_string();
                    overflow_done = true;
                }
                dialogue.push(line);
            }
        }
        DialogueFragment { dialogue }
    }

    fn music(&self, p: &TextPayload) -> MusicFragment {
        let scenes = p.upstream_as::<ScenesFragment>(AgentRole::ScriptWriter).map(|f| f.scenes).unwrap_or_default();
        let music = scenes
            .iter()
            .enumerate()
            .map(|(j, s)| MusicCue {
                scene_id: s.scene_id.clone(),
                direction: MusicDirection {
                    mood: format!("{} strings", s.emotional_tone),
                    intensity: (3 + self.key(p, "intensity", j as u64) % 5) as f64 / 10.0,
                    motif_seed: self.key(p, "motif", j as u64),
                },
            })
            .collect();
        MusicFragment { music }
    }
}

impl TextBackend for MockBackend {
    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        match serde_json::from_value::<TextPayload>(request.payload.clone()) {
            Ok(p) => Ok(BackendResponse::success(request.id, self.text_fragment(&p))),
            Err(e) => Ok(BackendResponse::failure(request.id, "E_PAYLOAD", e.to_string())),
        }
    }
}

impl VideoBackend for MockBackend {
    fn render_scene(&self, r: &SceneVideoRequest) -> Result<VideoClip, BackendError> {
        let h = hash_u64(&[
            b"video",
            &self.seed.to_le_bytes(),
            &r.seed.to_le_bytes(),
            r.scene_id.as_bytes(),
            r.prompt.as_bytes(),
        ]);
        // Per-channel gradient coefficients, values kept within [16, 200].
        let coef = |shift: u32| ((h >> shift) & 0x7) as usize + 1;
        let offs = |shift: u32| ((h >> shift) & 0xff) as usize;
        let (ax, ay, af) = ([coef(0), coef(3), coef(6)], [coef(9), coef(12), coef(15)], [coef(18), coef(21), coef(24)]);
        let d = [offs(27), offs(35), offs(43)];
        let (w, ht) = (r.width as usize, r.height as usize);
        let frames = (0..r.frame_count as usize)
            .map(|f| {
                let mut data = vec![0u8; w * ht * 3];
                for y in 0..ht {
                    let row = &mut data[y * w * 3..(y + 1) * w * 3];
                    for c in 0..3 {
                        let base = ay[c] * y + af[c] * f + d[c];
                        for x in 0..w {
                            row[x * 3 + c] = (16 + (ax[c] * x + base) % 185) as u8;
                        }
                    }
                }
                data
            })
            .collect();
        Ok(VideoClip { width: r.width, height: r.height, fps: r.fps, frames })
    }
}

impl PortraitBackend for MockBackend {
    fn portrait(&self, profile: &CharacterProfile, seed: u64) -> Result<Raster, BackendError> {
        let size = if self.has(&MockFault::SmallPortrait) { PORTRAIT_SIZE / 2 } else { PORTRAIT_SIZE };
        let h = hash_u64(&[
            b"portrait",
            canonical::to_canonical_string(&profile.appearance).as_bytes(),
            &seed.to_le_bytes(),
        ]);
        let color = |shift: u32| [(h >> shift) as u8, (h >> (shift + 8)) as u8, (h >> (shift + 16)) as u8];
        let (bg, skin, hair, attire) = (color(0), color(8), color(24), color(40));
        let mut img = Raster::filled(size, size, bg);
        let s = size as f64 / 512.0;
        let (cx, head_cy, head_r) = (256.0 * s, 220.0 * s, 110.0 * s);
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let shoulders = ((fx - cx) / (200.0 * s)).powi(2) + ((fy - 512.0 * s) / (150.0 * s)).powi(2) <= 1.0;
                let head_d2 = (fx - cx).powi(2) + (fy - head_cy).powi(2);
                if head_d2 <= (head_r * 1.08).powi(2) && fy < head_cy - 40.0 * s {
                    img.set_pixel(x, y, hair);
                } else if head_d2 <= head_r.powi(2) {
                    img.set_pixel(x, y, skin);
                } else if shoulders {
                    img.set_pixel(x, y, attire);
                }
            }
        }
        Ok(img)
    }
}

/// Fundamental frequency of a mock voice: a pure function of the voice spec.
pub fn voice_fundamental(voice: &VoiceSpec) -> f64 {
    let base = match voice.base_pitch {
        Pitch::Low => 110.0,
        Pitch::Mid => 165.0,
        Pitch::High => 220.0,
    };
    base + (voice.timbre_seed % 64) as f64
}

impl TtsBackend for MockBackend {
    fn synthesize(&self, voice: &VoiceSpec, text: &str, emotion: &str) -> Result<AudioTrack, BackendError> {
        let words = text.split_whitespace().count();
        let f0 = voice_fundamental(voice);
        let tone = match voice.pace {
            Pace::Slow => 3600,
            Pace::Normal => 3200,
            Pace::Fast => 2400,
        };
        let amp = 6000.0 + (hash_u64(&[b"emotion", emotion.as_bytes()]) % 6000) as f64;
        let mut samples = vec![0i16; words * WORD_SAMPLES];
        for word in 0..words {
            for n in 0..tone {
                let t = n as f64 / SAMPLE_RATE as f64;
                samples[word * WORD_SAMPLES + n] = (amp * (2.0 * PI * f0 * t).sin()).round() as i16;
            }
        }
        Ok(AudioTrack::new(samples))
    }
}

/// Mock segmentation rectangle for `character_id` in frame `frame`.
/// Returns `(x, y, w, h)`; drifts one pixel per frame to the right,
/// wrapping inside the frame.
pub fn mock_rect(character_id: &str, width: u32, height: u32, frame: usize) -> (u32, u32, u32, u32) {
    let h = hash_u64(&[b"segment", character_id.as_bytes()]);
    let rw = (width / 4).max(1);
    let rh = (height / 3).max(1);
    let span_x = (width - rw + 1) as u64;
    let span_y = (height - rh + 1) as u64;
    let x0 = h % span_x;
    let y = ((h >> 24) % span_y) as u32;
    let x = ((x0 + frame as u64) % span_x) as u32;
    (x, y, rw, rh)
}

impl SegmentationBackend for MockBackend {
    fn segment(&self, clip: &VideoClip, character_id: &str, _keyword: &str) -> Result<MaskSequence, BackendError> {
        let mut masks = MaskSequence::empty(clip.width, clip.height, clip.frame_count());
        if self.has(&MockFault::Miss(character_id.to_string())) {
            return Ok(masks);
        }
        for (f, mask) in masks.frames.iter_mut().enumerate() {
            let (x, y, w, h) = mock_rect(character_id, clip.width, clip.height, f);
            for row in y..y + h {
                let start = (row * clip.width + x) as usize;
                mask[start..start + w as usize].fill(true);
            }
        }
        Ok(masks)
    }
}

/// Index of the first pixel (frame, offset) outside the mask, if any.
fn first_unmasked(masks: &MaskSequence) -> Option<(usize, usize)> {
    masks
        .frames
        .iter()
        .enumerate()
        .find_map(|(f, m)| m.iter().position(|&b| !b).map(|p| (f, p)))
}

impl FaceSwapBackend for MockBackend {
    fn swap(&self, clip: &VideoClip, masks: &MaskSequence, portrait: &Raster) -> Result<VideoClip, BackendError> {
        let mean = portrait.mean_color();
        let mut out = clip.clone();
        for (frame, mask) in out.frames.iter_mut().zip(&masks.frames) {
            for (px, _) in frame.chunks_exact_mut(3).zip(mask).filter(|(_, &m)| m) {
                for c in 0..3 {
                    px[c] = ((px[c] as u16 + mean[c] as u16) / 2) as u8;
                }
            }
        }
        if self.has(&MockFault::LeakySwap) {
            if let Some((f, p)) = first_unmasked(masks) {
                out.frames[f][p * 3] ^= 1;
            }
        }
        Ok(out)
    }
}

/// Brightness lift applied by the mock lip sync for a window RMS.
pub fn lipsync_delta(rms: f64) -> u8 {
    (rms * 64.0 / 32768.0).ceil().min(255.0) as u8
}

impl LipSyncBackend for MockBackend {
    fn lipsync(
        &self,
        clip: &VideoClip,
        masks: &MaskSequence,
        audio: &AudioTrack,
        range: FrameRange,
    ) -> Result<VideoClip, BackendError> {
        let mut out = clip.clone();
        let end = (range.end as usize).min(clip.frame_count());
        for f in range.start as usize..end {
            let local = (f - range.start as usize) as u32;
            let window = frame_range_to_sample_range(FrameRange { start: local, end: local + 1 }, clip.fps, SAMPLE_RATE);
            let delta = lipsync_delta(audio.rms(window.start as usize, window.end as usize));
            if delta == 0 {
                continue;
            }
            for (px, _) in out.frames[f].chunks_exact_mut(3).zip(&masks.frames[f]).filter(|(_, &m)| m) {
                for v in px.iter_mut() {
                    *v = v.saturating_add(delta);
                }
            }
        }
        if self.has(&MockFault::LeakyLipsync) {
            let f = if range.start > 0 { 0 } else { clip.frame_count() - 1 };
            out.frames[f][0] ^= 1;
        }
        Ok(out)
    }
}

impl MusicBackend for MockBackend {
    fn compose(&self, direction: &MusicDirection, _duration_samples: u64) -> Result<AudioTrack, BackendError> {
        const SCALE: [f64; 8] = [0.0, 2.0, 4.0, 5.0, 7.0, 9.0, 11.0, 12.0];
        let amp = (direction.intensity.clamp(0.0, 1.0) * 6000.0).round();
        let note_len = MOTIF_SAMPLES / 8;
        let mut samples = vec![0i16; MOTIF_SAMPLES];
        for note in 0..8 {
            let step = hash_u64(&[b"motif", &direction.motif_seed.to_le_bytes(), &[note as u8]]) % 8;
            let freq = 220.0 * 2f64.powf(SCALE[step as usize] / 12.0);
            for n in 0..note_len {
                let t = n as f64 / SAMPLE_RATE as f64;
                samples[note * note_len + n] = (amp * (2.0 * PI * freq * t).sin()).round() as i16;
            }
        }
        Ok(AudioTrack::new(samples))
    }
}
