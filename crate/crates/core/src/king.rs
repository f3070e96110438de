//! The King: persona, evaluation prompts, the verdict contract, and mood.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{generate_structured, Backend, ChatMessage, GenerationRequest, Task};
use crate::error::{ContractError, Result};
use crate::extract::first_json_object;
use crate::session::{Author, StoryTurn};

pub const MIN_MOOD_DELTA: i32 = -20;
pub const MAX_MOOD_DELTA: i32 = 10;
pub const DEFAULT_TRANSCRIPT_BUDGET: usize = 6000;
pub const SYNOPSIS_PREFIX: &str = "Earlier in the tale: ";
pub const CONTINUATION_TEMPERATURE: f32 = 0.8;

/// Used when an angry verdict arrives without a usable negative delta.
const ANGRY_FALLBACK_DELTA: i32 = -10;
const REPHRASE_FALLBACK_DELTA: i32 = -5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonaConfig {
    pub name: String,
    pub traits: Vec<String>,
    pub likes: Vec<String>,
    pub rejects: Vec<String>,
    pub anger_limit: u32,
    pub style_note: String,
}

impl Default for PersonaConfig {
    fn default() -> Self {
        let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        PersonaConfig {
            name: "Shahryar".into(),
            traits: strings(&["arrogant", "greedy", "moody", "easily bored"]),
            likes: strings(&["battles", "treasures", "cunning heroes", "exotic feasts"]),
            rejects: strings(&["modern technology", "nonsense text", "anachronisms"]),
            anger_limit: 3,
            style_note: "Speak in a proud, ornate voice, as a king of old who expects to be entertained."
                .into(),
        }
    }
}

impl PersonaConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("persona name is empty".into());
        }
        for (field, list) in [("traits", &self.traits), ("likes", &self.likes), ("rejects", &self.rejects)] {
            if list.is_empty() || list.iter().all(|s| s.trim().is_empty()) {
                return Err(format!("persona {field} must not be empty"));
            }
        }
        if self.anger_limit < 1 {
            return Err("anger_limit must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictKind {
    #[serde(rename = "continue")]
    Continue,
    #[serde(rename = "rephrase")]
    Rephrase,
    #[serde(rename = "angry")]
    AngryCorrect,
}

impl VerdictKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictKind::Continue => "continue",
            VerdictKind::Rephrase => "rephrase",
            VerdictKind::AngryCorrect => "angry",
        }
    }

    /// Case-insensitive; separators are ignored so `Angry_Correct` works too.
    pub fn parse_loose(s: &str) -> Option<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match norm.as_str() {
            "continue" | "continued" | "accept" => Some(VerdictKind::Continue),
            "rephrase" | "correct" => Some(VerdictKind::Rephrase),
            "angry" | "angrycorrect" | "anger" => Some(VerdictKind::AngryCorrect),
            _ => None,
        }
    }
}

/// The King's structured reaction to one player passage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KingVerdict {
    pub kind: VerdictKind,
    pub comment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation: Option<String>,
    pub mood_delta: i32,
}

impl KingVerdict {
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let has_prose = self
            .continuation
            .as_deref()
            .is_some_and(|c| !c.trim().is_empty());
        if (self.kind == VerdictKind::Continue) != has_prose {
            return Err(format!("{} verdict with continuation={:?}", self.kind.as_str(), self.continuation));
        }
        if !(MIN_MOOD_DELTA..=MAX_MOOD_DELTA).contains(&self.mood_delta) {
            return Err(format!("mood_delta {} out of range", self.mood_delta));
        }
        if self.kind == VerdictKind::AngryCorrect && self.mood_delta >= 0 {
            return Err("angry verdict with non-negative mood_delta".into());
        }
        Ok(())
    }

    pub fn to_wire(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}

/// Reads a verdict out of raw model output.
///
/// Tolerates fences and surrounding prose, normalizes the kind, clamps the
/// mood delta. Fails only when no object with a recognizable kind exists or
/// a continue verdict carries no continuation.
pub fn parse_verdict(raw: &str) -> std::result::Result<KingVerdict, ContractError> {
    let obj = first_json_object(raw).ok_or_else(|| ContractError::new("no JSON object found"))?;

    let kind = match obj.get("kind") {
        Some(Value::String(s)) => VerdictKind::parse_loose(s)
            .ok_or_else(|| ContractError::new(format!("unrecognized kind `{s}`")))?,
        Some(_) => return Err(ContractError::new("kind must be a string")),
        None => return Err(ContractError::new("missing field kind")),
    };

    let comment = match obj.get("comment") {
        Some(Value::String(s)) => s.clone(),
        None | Some(Value::Null) => String::new(),
        Some(_) => return Err(ContractError::new("comment must be a string")),
    };

    let continuation = match kind {
        VerdictKind::Continue => match obj.get("continuation") {
            Some(Value::String(s)) if !s.trim().is_empty() => Some(s.clone()),
            _ => {
                return Err(ContractError::new(
                    "continue verdict requires a non-empty continuation string",
                ))
            }
        },
        _ => None,
    };

    let requested = obj.get("mood_delta").and_then(|v| match v {
        Value::Number(n) => n
            .as_i64()
            .map(|i| i.clamp(MIN_MOOD_DELTA as i64, MAX_MOOD_DELTA as i64) as i32)
            .or_else(|| n.as_f64().map(|f| f.round().clamp(MIN_MOOD_DELTA as f64, MAX_MOOD_DELTA as f64) as i32)),
        Value::String(s) => s.trim().parse::<i64>().ok().map(|i| i.clamp(MIN_MOOD_DELTA as i64, MAX_MOOD_DELTA as i64) as i32),
        _ => None,
    });
    let mood_delta = match (kind, requested) {
        (VerdictKind::AngryCorrect, Some(d)) if d < 0 => d,
        (VerdictKind::AngryCorrect, _) => ANGRY_FALLBACK_DELTA,
        (VerdictKind::Rephrase, None) => REPHRASE_FALLBACK_DELTA,
        (_, Some(d)) => d,
        (VerdictKind::Continue, None) => 0,
    };

    Ok(KingVerdict {
        kind,
        comment,
        continuation,
        mood_delta,
    })
}

pub fn apply_mood(mood: u8, verdict: &KingVerdict) -> u8 {
    (i32::from(mood) + verdict.mood_delta).clamp(0, 100) as u8
}

/// System instruction, transcript window, and the new passage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system: String,
    pub transcript: String,
    pub user: String,
}

impl PromptBundle {
    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![ChatMessage::user(self.user.clone())]
    }
}

pub fn build_evaluation_prompt(persona: &PersonaConfig, story: &[StoryTurn], player_text: &str) -> PromptBundle {
    build_evaluation_prompt_with_budget(persona, story, player_text, DEFAULT_TRANSCRIPT_BUDGET)
}

pub fn build_evaluation_prompt_with_budget(
    persona: &PersonaConfig,
    story: &[StoryTurn],
    player_text: &str,
    budget: usize,
) -> PromptBundle {
    let system = persona_instruction(persona);
    let transcript = render_transcript(story, budget);
    let user = if transcript.is_empty() {
        format!("The story begins tonight.\n\nThe storyteller's new passage:\n{player_text}")
    } else {
        format!("The story so far:\n{transcript}\n\nThe storyteller's new passage:\n{player_text}")
    };
    PromptBundle {
        system,
        transcript,
        user,
    }
}

fn persona_instruction(p: &PersonaConfig) -> String {
    format!(
        "You are {name}, king of an ancient realm. Each night a storyteller spins a tale for you, \
         and you alone decide whether it deserves to go on.\n\
         Your temperament: {traits}.\n\
         What pleases you: {likes}.\n\
         What you scorn: {rejects}. Words from later ages mean nothing to you.\n\
         You are willing to follow the tale wherever it wanders. Save your anger for passages \
         that plainly break the story, such as strings of random characters or a heap of modern words.\n\
         If the passage is acceptable, react in character and then carry the story forward yourself \
         for a few sentences in the same world. {style}\n\
         If it is weak or drifting, tell the storyteller to rephrase or to steer the tale back, \
         and do not continue it.\n\n\
         Reply with exactly one JSON object and nothing else:\n\
         {{\"kind\": \"continue\" | \"rephrase\" | \"angry\", \"comment\": \"<your reaction>\", \
         \"continuation\": \"<your continuation, only when kind is continue>\", \
         \"mood_delta\": <integer from {min} to {max}>}}\n\
         A continue verdict needs a non-empty continuation. An angry verdict needs a negative mood_delta.",
        name = p.name,
        traits = p.traits.join(", "),
        likes = p.likes.join(", "),
        rejects = p.rejects.join(", "),
        style = p.style_note,
        min = MIN_MOOD_DELTA,
        max = MAX_MOOD_DELTA,
    )
}

/// Asks the backend for a verdict, with one repair round on a bad reply.
pub fn evaluate(backend: &dyn Backend, bundle: &PromptBundle, seed: u64, turn: usize) -> Result<KingVerdict> {
    let request = GenerationRequest::chat(Task::Verdict, bundle.system.clone(), bundle.messages())
        .with_temperature(CONTINUATION_TEMPERATURE)
        .with_seed(seed.wrapping_add(turn as u64));
    generate_structured(backend, request, parse_verdict)
}

fn transcript_line(turn: &StoryTurn) -> String {
    match (turn.author, turn.rejected) {
        (Author::Player, false) => format!("Storyteller: {}", turn.text),
        (Author::Player, true) => format!("Storyteller (refused): {}", turn.text),
        (Author::King, _) => format!("King: {}", turn.text),
    }
}

/// Renders the turn log into at most `budget` characters. When the log does
/// not fit, the newest lines are kept and everything older collapses into a
/// single synopsis line at the top.
pub fn render_transcript(turns: &[StoryTurn], budget: usize) -> String {
    let lines: Vec<String> = turns.iter().map(transcript_line).collect();
    let total: usize = lines.iter().map(|l| l.chars().count()).sum::<usize>() + lines.len().saturating_sub(1);
    if total <= budget {
        return lines.join("\n");
    }

    let reserve = (budget / 5).clamp(SYNOPSIS_PREFIX.len().min(budget), 1000);
    let avail = budget.saturating_sub(reserve + 1);
    let mut kept: Vec<String> = Vec::new();
    let mut used = 0;
    for line in lines.iter().rev() {
        let cost = line.chars().count() + usize::from(!kept.is_empty());
        if used + cost > avail {
            break;
        }
        used += cost;
        kept.push(line.clone());
    }
    if kept.is_empty() && avail > 1 {
        let newest = lines.last().expect("non-empty when over budget");
        kept.push(format!("…{}", tail_chars(newest, avail - 1)));
    }
    kept.reverse();

    let dropped = &turns[..turns.len() - kept.len()];
    let gist: Vec<String> = dropped
        .iter()
        .filter(|t| !t.rejected)
        .map(|t| first_sentence(&t.text))
        .collect();
    let synopsis = clip_with_ellipsis(&format!("{SYNOPSIS_PREFIX}{}", gist.join(" ")), reserve);
    if kept.is_empty() {
        return synopsis;
    }
    format!("{synopsis}\n{}", kept.join("\n"))
}

fn first_sentence(text: &str) -> String {
    let end = text
        .char_indices()
        .find(|(_, c)| matches!(c, '.' | '!' | '?'))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(text.len());
    text[..end].trim().to_owned()
}

fn tail_chars(s: &str, n: usize) -> &str {
    let count = s.chars().count();
    if count <= n {
        return s;
    }
    let (i, _) = s.char_indices().nth(count - n).expect("in range");
    &s[i..]
}

fn clip_with_ellipsis(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        return s.to_owned();
    }
    let mut out: String = s.chars().take(max.saturating_sub(1)).collect();
    if max > 0 {
        out.push('…');
    }
    out
}
