//! Quality-inspection rule engine over a [`CinematicBlueprint`].
//!
//! Every rule has a fixed code and an owning agent role; the repair loop uses
//! the owner to decide which agent to re-invoke. Validation never fails: it
//! returns the full list of findings in rule order, then path order.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agentflow::AgentRole;
use crate::blueprint::{CinematicBlueprint, StoryConcept};
use crate::canonical;

pub const DEFAULT_RELEVANCE_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleCode {
    #[serde(rename = "E_REF_CHARACTER")]
    RefCharacter,
    #[serde(rename = "E_TIMING_OVERFLOW")]
    TimingOverflow,
    #[serde(rename = "E_TIMING_SELF_OVERLAP")]
    TimingSelfOverlap,
    #[serde(rename = "E_KEYWORD_MISSING")]
    KeywordMissing,
    #[serde(rename = "E_KEYWORD_COLLISION")]
    KeywordCollision,
    #[serde(rename = "E_MUSIC_MISSING")]
    MusicMissing,
    #[serde(rename = "E_EMPTY_SCENE")]
    EmptyScene,
    #[serde(rename = "E_FPS_MISMATCH")]
    FpsMismatch,
    #[serde(rename = "E_UNUSED_CHARACTER")]
    UnusedCharacter,
    #[serde(rename = "E_IRRELEVANT")]
    Irrelevant,
}

impl RuleCode {
    /// Registry order.
    pub const ALL: [RuleCode; 10] = [
        RuleCode::RefCharacter,
        RuleCode::TimingOverflow,
        RuleCode::TimingSelfOverlap,
        RuleCode::KeywordMissing,
        RuleCode::KeywordCollision,
        RuleCode::MusicMissing,
        RuleCode::EmptyScene,
        RuleCode::FpsMismatch,
        RuleCode::UnusedCharacter,
        RuleCode::Irrelevant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleCode::RefCharacter => "E_REF_CHARACTER",
            RuleCode::TimingOverflow => "E_TIMING_OVERFLOW",
            RuleCode::TimingSelfOverlap => "E_TIMING_SELF_OVERLAP",
            RuleCode::KeywordMissing => "E_KEYWORD_MISSING",
            RuleCode::KeywordCollision => "E_KEYWORD_COLLISION",
            RuleCode::MusicMissing => "E_MUSIC_MISSING",
            RuleCode::EmptyScene => "E_EMPTY_SCENE",
            RuleCode::FpsMismatch => "E_FPS_MISMATCH",
            RuleCode::UnusedCharacter => "E_UNUSED_CHARACTER",
            RuleCode::Irrelevant => "E_IRRELEVANT",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            RuleCode::UnusedCharacter => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for RuleCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: RuleCode,
    pub path: String,
    pub message: String,
    pub owner: AgentRole,
}

impl Violation {
    fn new(code: RuleCode, path: impl Into<String>, message: impl Into<String>, owner: AgentRole) -> Self {
        Violation { code, path: path.into(), message: message.into(), owner }
    }

    pub fn is_blocking(&self) -> bool {
        self.code.severity() == Severity::Error
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.code, self.path, self.message)
    }
}

pub fn has_blocking(violations: &[Violation]) -> bool {
    violations.iter().any(Violation::is_blocking)
}

#[derive(Serialize)]
struct ReportEntry<'a> {
    code: RuleCode,
    path: &'a str,
    message: &'a str,
    owner: AgentRole,
    severity: Severity,
}

/// `violations.json` body in canonical form.
pub fn report_json(violations: &[Violation]) -> String {
    #[derive(Serialize)]
    struct Report<'a> {
        blocking: usize,
        violations: Vec<ReportEntry<'a>>,
    }
    let report = Report {
        blocking: violations.iter().filter(|v| v.is_blocking()).count(),
        violations: violations
            .iter()
            .map(|v| ReportEntry {
                code: v.code,
                path: &v.path,
                message: &v.message,
                owner: v.owner,
                severity: v.code.severity(),
            })
            .collect(),
    };
    canonical::to_canonical_string(&report)
}

fn normalize_keyword(k: &str) -> String {
    k.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Runs the structural rule registry (everything except relevance).
pub fn validate(bp: &CinematicBlueprint) -> Vec<Violation> {
    use AgentRole::*;
    let mut out = Vec::new();
    let known: HashSet<&str> = bp.characters.iter().map(|c| c.character_id.as_str()).collect();
    let scenes: HashMap<&str, usize> = bp.scenes.iter().enumerate().map(|(i, s)| (s.scene_id.as_str(), i)).collect();

    // E_REF_CHARACTER
    for (i, s) in bp.scenes.iter().enumerate() {
        for (j, id) in s.character_ids.iter().enumerate() {
            if !known.contains(id.as_str()) {
                out.push(Violation::new(
                    RuleCode::RefCharacter,
                    format!("scenes[{i}].character_ids[{j}]"),
                    format!("scene {} references unknown character {id:?}", s.scene_id),
                    ScriptWriter,
                ));
            }
        }
    }
    for (k, d) in bp.dialogue.iter().enumerate() {
        if !known.contains(d.character_id.as_str()) {
            out.push(Violation::new(
                RuleCode::RefCharacter,
                format!("dialogue[{k}].character_id"),
                format!("dialogue references unknown character {:?}", d.character_id),
                Storyteller,
            ));
        }
    }

    // E_TIMING_OVERFLOW
    for (k, d) in bp.dialogue.iter().enumerate() {
        if let Some(&i) = scenes.get(d.scene_id.as_str()) {
            let frames = bp.scenes[i].frame_count;
            if d.frame_range.end > frames {
                out.push(Violation::new(
                    RuleCode::TimingOverflow,
                    format!("dialogue[{k}].frame_range"),
                    format!(
                        "[{}, {}) ends after scene {} ({frames} frames)",
                        d.frame_range.start, d.frame_range.end, d.scene_id
                    ),
                    Storyteller,
                ));
            }
        }
    }

    // E_TIMING_SELF_OVERLAP, reported on the later line of each pair.
    for (k, d) in bp.dialogue.iter().enumerate() {
        if let Some((first, _)) = bp.dialogue[..k].iter().enumerate().find(|(_, e)| {
            e.scene_id == d.scene_id && e.character_id == d.character_id && e.frame_range.intersects(&d.frame_range)
        }) {
            out.push(Violation::new(
                RuleCode::TimingSelfOverlap,
                format!("dialogue[{k}].frame_range"),
                format!("{} speaks over own line dialogue[{first}]", d.character_id),
                Storyteller,
            ));
        }
    }

    let cast: HashSet<&str> = bp.scenes.iter().flat_map(|s| s.character_ids.iter().map(String::as_str)).collect();

    // E_KEYWORD_MISSING
    for (i, c) in bp.characters.iter().enumerate() {
        if cast.contains(c.character_id.as_str()) && c.detection_keyword.trim().is_empty() {
            out.push(Violation::new(
                RuleCode::KeywordMissing,
                format!("characters[{i}].detection_keyword"),
                format!("{} appears in a scene but has no detection keyword", c.character_id),
                CharacterDesigner,
            ));
        }
    }

    // E_KEYWORD_COLLISION
    let mut keyword_owner: HashMap<String, &str> = HashMap::new();
    for (i, c) in bp.characters.iter().enumerate() {
        let key = normalize_keyword(&c.detection_keyword);
        if key.is_empty() {
            continue;
        }
        if let Some(prev) = keyword_owner.get(&key) {
            out.push(Violation::new(
                RuleCode::KeywordCollision,
                format!("characters[{i}].detection_keyword"),
                format!("{} shares keyword {key:?} with {prev}", c.character_id),
                CharacterDesigner,
            ));
        } else {
            keyword_owner.insert(key, &c.character_id);
        }
    }

    // E_MUSIC_MISSING
    for (i, s) in bp.scenes.iter().enumerate() {
        if s.music_direction.is_none() {
            out.push(Violation::new(
                RuleCode::MusicMissing,
                format!("scenes[{i}].music_direction"),
                format!("scene {} has no music direction", s.scene_id),
                Composer,
            ));
        }
    }

    // E_EMPTY_SCENE
    for (i, s) in bp.scenes.iter().enumerate() {
        if s.character_ids.is_empty() && bp.scene_dialogue(&s.scene_id).next().is_none() {
            out.push(Violation::new(
                RuleCode::EmptyScene,
                format!("scenes[{i}]"),
                format!("scene {} has neither characters nor dialogue", s.scene_id),
                ScriptWriter,
            ));
        }
    }

    // E_FPS_MISMATCH
    if let Some(first) = bp.scenes.first() {
        for (i, s) in bp.scenes.iter().enumerate().skip(1) {
            if s.fps != first.fps {
                out.push(Violation::new(
                    RuleCode::FpsMismatch,
                    format!("scenes[{i}].fps"),
                    format!("{} fps differs from {} fps in scenes[0]", s.fps, first.fps),
                    ScriptWriter,
                ));
            }
        }
    }

    // E_UNUSED_CHARACTER (warning)
    for (i, c) in bp.characters.iter().enumerate() {
        if !cast.contains(c.character_id.as_str()) {
            out.push(Violation::new(
                RuleCode::UnusedCharacter,
                format!("characters[{i}]"),
                format!("{} appears in no scene", c.character_id),
                CharacterDesigner,
            ));
        }
    }

    out
}

/// Structural rules plus the relevance rule at `threshold`.
pub fn inspect(bp: &CinematicBlueprint, story: &StoryConcept, threshold: f64) -> Vec<Violation> {
    let mut out = validate(bp);
    let score = relevance_check(bp, story);
    if score < threshold {
        out.push(Violation::new(
            RuleCode::Irrelevant,
            "story.text",
            format!("relevance {score:.3} below threshold {threshold}"),
            AgentRole::ScriptWriter,
        ));
    }
    out
}

const STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having", "he",
    "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "itself", "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she", "should", "so", "some",
    "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they",
    "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when",
    "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
];

/// Lowercased alphanumeric words of two or more characters, stop words
/// removed.
pub fn content_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() > 1)
        .map(str::to_lowercase)
        .filter(|w| !STOP_WORDS.contains(&w.as_str()))
        .collect()
}

/// Every free-text field of the blueprint outside the story itself.
pub fn blueprint_text(bp: &CinematicBlueprint) -> String {
    let mut parts: Vec<&str> = Vec::new();
    for c in &bp.characters {
        parts.push(&c.name);
        parts.extend(c.appearance.values().map(String::as_str));
        parts.extend(c.personality.values().map(String::as_str));
        parts.extend(c.behavioral_patterns.iter().map(String::as_str));
        parts.push(&c.detection_keyword);
    }
    for s in &bp.scenes {
        parts.push(&s.visual_description);
        parts.push(&s.camera_notes);
        parts.push(&s.emotional_tone);
        if let Some(m) = &s.music_direction {
            parts.push(&m.mood);
        }
    }
    for d in &bp.dialogue {
        parts.push(&d.text);
        parts.push(&d.emotion);
    }
    parts.join(" ")
}

/// Fraction of the story's content words that appear anywhere in the
/// blueprint's text. A story with no content words scores 1.0.
pub fn relevance_check(bp: &CinematicBlueprint, story: &StoryConcept) -> f64 {
    let wanted = content_words(&story.text);
    if wanted.is_empty() {
        return 1.0;
    }
    let have = content_words(&blueprint_text(bp));
    wanted.intersection(&have).count() as f64 / wanted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blueprint::fixtures::*;
    use crate::blueprint::{DialogueLine, FrameRange};

    fn line(scene: &str, who: &str, start: u32, end: u32) -> DialogueLine {
        DialogueLine {
            scene_id: scene.into(),
            character_id: who.into(),
            text: "we meet again".into(),
            frame_range: FrameRange { start, end },
            emotion: "warm".into(),
        }
    }

    fn codes(v: &[Violation]) -> Vec<RuleCode> {
        v.iter().map(|v| v.code).collect()
    }

    #[test]
    fn clean_fixture_has_no_findings() {
        let mut bp = minimal();
        bp.dialogue.push(line("s1", "ava", 24, 48));
        assert!(validate(&bp).is_empty());
    }

    #[test]
    fn overflow_is_reported_on_the_line() {
        let mut bp = minimal();
        bp.dialogue.push(line("s1", "ava", 0, 10));
        bp.dialogue.push(line("s1", "ava", 100, 140));
        let v = validate(&bp);
        assert_eq!(codes(&v), vec![RuleCode::TimingOverflow]);
        assert_eq!(v[0].path, "dialogue[1].frame_range");
        assert_eq!(v[0].owner, AgentRole::Storyteller);
    }

    #[test]
    fn shared_keyword_collides() {
        let mut bp = minimal();
        bp.characters = vec![character("a", "man in red coat"), character("b", "Man in  red coat")];
        bp.scenes[0].character_ids = vec!["a".into(), "b".into()];
        let v = validate(&bp);
        assert_eq!(codes(&v), vec![RuleCode::KeywordCollision]);
        assert_eq!(v[0].path, "characters[1].detection_keyword");
    }

    #[test]
    fn unused_character_is_a_warning() {
        let mut bp = minimal();
        bp.characters.push(character("extra", "tall stranger"));
        let v = validate(&bp);
        assert_eq!(codes(&v), vec![RuleCode::UnusedCharacter]);
        assert!(!has_blocking(&v));
    }

    #[test]
    fn order_is_rule_then_path() {
        let mut bp = minimal();
        bp.scenes[0].music_direction = None;
        bp.dialogue.push(line("s1", "ghost", 0, 10));
        bp.dialogue.push(line("s1", "ava", 120, 200));
        bp.dialogue.push(line("s1", "ava", 110, 130));
        let v = validate(&bp);
        assert_eq!(
            codes(&v),
            vec![
                RuleCode::RefCharacter,
                RuleCode::TimingOverflow,
                RuleCode::TimingOverflow,
                RuleCode::TimingSelfOverlap,
                RuleCode::MusicMissing
            ]
        );
        assert_eq!(v[1].path, "dialogue[1].frame_range");
        assert_eq!(v[2].path, "dialogue[2].frame_range");
    }

    #[test]
    fn relevance_bounds() {
        let bp = minimal();
        let mut lorem = bp.clone();
        for c in &mut lorem.characters {
            c.name = "lorem ipsum".into();
            c.appearance.values_mut().for_each(|v| *v = "lorem ipsum".into());
            c.personality.values_mut().for_each(|v| *v = "lorem ipsum".into());
            c.behavioral_patterns.iter_mut().for_each(|v| *v = "lorem ipsum".into());
            c.detection_keyword = "lorem ipsum".into();
        }
        for s in &mut lorem.scenes {
            s.visual_description = "lorem ipsum".into();
            s.camera_notes = "lorem ipsum".into();
            s.emotional_tone = "lorem ipsum".into();
            s.music_direction.as_mut().unwrap().mood = "lorem ipsum".into();
        }
        assert_eq!(relevance_check(&lorem, &bp.story), 0.0);

        let echo = StoryConcept::new(blueprint_text(&bp), 1);
        assert_eq!(relevance_check(&bp, &echo), 1.0);

        let v = inspect(&lorem, &bp.story, DEFAULT_RELEVANCE_THRESHOLD);
        assert_eq!(codes(&v), vec![RuleCode::Irrelevant]);
        assert_eq!(v[0].path, "story.text");
    }

    #[test]
    fn stop_words_do_not_count() {
        assert_eq!(
            content_words("The Rainy reunion, at the STATION!"),
            ["rainy", "reunion", "station"].into_iter().map(String::from).collect()
        );
    }

    #[test]
    fn report_is_canonical() {
        let mut bp = minimal();
        bp.dialogue.push(line("s1", "ava", 100, 140));
        let json = report_json(&validate(&bp));
        assert!(json.starts_with(r#"{"blocking":1,"violations":[{"code":"E_TIMING_OVERFLOW","#));
        assert_eq!(report_json(&[]), r#"{"blocking":0,"violations":[]}"#);
    }
}
