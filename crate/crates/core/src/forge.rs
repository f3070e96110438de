//! Weapon keywords in the King's prose, and the cards they turn into.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::backend::{generate_structured, ChatMessage, GenerationRequest, SceneImageRef, Task};
use crate::clock::{derived_uuid, stable_hash64};
use crate::error::{ContractError, Error, Result};
use crate::extract::first_json_object;
use crate::king::render_transcript;
use crate::session::{truncate_chars, GameSession, TurnContext};

pub const CATEGORY_COUNT: usize = 7;
pub const MAX_WEAPONS: usize = 4;
pub const MIN_POWER: i64 = 10;
pub const MAX_POWER: i64 = 40;
pub const MAX_NAME_CHARS: usize = 60;
pub const MAX_DESCRIPTION_CHARS: usize = 300;
const CARD_TEMPERATURE: f32 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeaponCategory {
    pub id: String,
    pub canonical: String,
    pub synonyms: Vec<String>,
}

impl WeaponCategory {
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeaponLexicon {
    pub categories: Vec<WeaponCategory>,
}

fn category(id: &str, synonyms: &[&str]) -> WeaponCategory {
    WeaponCategory {
        id: id.into(),
        canonical: id.into(),
        synonyms: synonyms.iter().map(|s| s.to_string()).collect(),
    }
}

impl Default for WeaponLexicon {
    fn default() -> Self {
        WeaponLexicon {
            categories: vec![
                category("sword", &["swords", "blade", "blades", "scimitar", "scimitars", "sabre", "sabres", "saber", "sabers"]),
                category("shield", &["shields", "buckler", "bucklers", "aegis"]),
                category("dagger", &["daggers", "knife", "knives", "khanjar", "dirk", "dirks"]),
                category("spear", &["spears", "lance", "lances", "javelin", "javelins", "pike", "pikes"]),
                category("bow", &["bows", "longbow", "longbows", "crossbow", "crossbows"]),
                category("axe", &["axes", "hatchet", "hatchets", "battleaxe", "battleaxes"]),
                category("hammer", &["hammers", "warhammer", "warhammers", "mace", "maces", "maul"]),
            ],
        }
    }
}

pub fn default_lexicon() -> WeaponLexicon {
    WeaponLexicon::default()
}

impl WeaponLexicon {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.categories.len() != CATEGORY_COUNT {
            return Err(format!("lexicon needs exactly {CATEGORY_COUNT} categories, got {}", self.categories.len()));
        }
        let mut ids = HashSet::new();
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for c in &self.categories {
            if c.id.is_empty() || !ids.insert(c.id.as_str()) {
                return Err(format!("duplicate or empty category id `{}`", c.id));
            }
            for term in c.terms() {
                if term.trim().is_empty() || term != term.to_lowercase() {
                    return Err(format!("term `{term}` must be non-empty lowercase"));
                }
                if let Some(prev) = owner.insert(term, &c.id) {
                    if prev != c.id {
                        return Err(format!("term `{term}` appears in `{prev}` and `{}`", c.id));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn category(&self, id: &str) -> Option<&WeaponCategory> {
        self.categories.iter().find(|c| c.id == id)
    }

    /// Loads and validates a lexicon override file.
    pub fn load(path: &Path) -> std::result::Result<Self, String> {
        let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let lexicon: WeaponLexicon = serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
        lexicon.validate()?;
        Ok(lexicon)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub category: String,
    pub term: String,
    /// The sentence the term sits in, trimmed.
    pub sentence: String,
    /// Character offset of the match in the scanned text.
    pub offset: usize,
}

/// Letters, digits and underscore glue words together; anything else is a boundary.
pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Single-char lowercase; characters that lowercase to several stay as they are.
fn fold(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Finds the earliest whole-word weapon term in `text`.
///
/// Matching is case-insensitive. Two terms starting at the same offset
/// resolve to the longer one, then to lexicon order.
pub fn detect_keyword(text: &str, lexicon: &WeaponLexicon) -> Option<Detection> {
    struct Term<'a> {
        chars: Vec<char>,
        text: &'a str,
        category: &'a str,
        order: usize,
    }
    let mut by_first: HashMap<char, Vec<Term<'_>>> = HashMap::new();
    let mut order = 0;
    for c in &lexicon.categories {
        for term in c.terms() {
            let chars: Vec<char> = term.chars().map(fold).collect();
            if let Some(&first) = chars.first() {
                by_first.entry(first).or_default().push(Term {
                    chars,
                    text: term,
                    category: &c.id,
                    order,
                });
            }
            order += 1;
        }
    }
    for bucket in by_first.values_mut() {
        bucket.sort_by(|a, b| b.chars.len().cmp(&a.chars.len()).then(a.order.cmp(&b.order)));
    }

    let chars: Vec<char> = text.chars().map(fold).collect();
    for start in 0..chars.len() {
        if start > 0 && is_word_char(chars[start - 1]) {
            continue;
        }
        let Some(bucket) = by_first.get(&chars[start]) else {
            continue;
        };
        for term in bucket {
            let end = start + term.chars.len();
            if end > chars.len() || chars[start..end] != term.chars[..] {
                continue;
            }
            if end < chars.len() && is_word_char(chars[end]) {
                continue;
            }
            return Some(Detection {
                category: term.category.to_owned(),
                term: term.text.to_owned(),
                sentence: sentence_around(text, start),
                offset: start,
            });
        }
    }
    None
}

/// The `.`/`!`/`?`/`;`-delimited sentence containing char offset `at`.
pub fn sentence_around(text: &str, at: usize) -> String {
    let chars: Vec<char> = text.chars().collect();
    let is_stop = |c: char| matches!(c, '.' | '!' | '?' | ';');
    let start = chars[..at].iter().rposition(|&c| is_stop(c)).map_or(0, |i| i + 1);
    let end = chars[at..].iter().position(|&c| is_stop(c)).map_or(chars.len(), |i| at + i + 1);
    chars[start..end].iter().collect::<String>().trim().to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeaponCard {
    pub id: String,
    pub category: String,
    pub name: String,
    pub description: String,
    pub power: u32,
    pub effect_description: String,
    pub player_line: String,
    pub king_line: String,
    pub source_excerpt: String,
    pub artwork: Option<SceneImageRef>,
}

impl WeaponCard {
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if !(MIN_POWER..=MAX_POWER).contains(&i64::from(self.power)) {
            return Err(format!("card {} power {}", self.id, self.power));
        }
        if self.name.trim().is_empty() || self.description.trim().is_empty() {
            return Err(format!("card {} lacks name or description", self.id));
        }
        if self.name.chars().count() > MAX_NAME_CHARS || self.description.chars().count() > MAX_DESCRIPTION_CHARS {
            return Err(format!("card {} text too long", self.id));
        }
        Ok(())
    }
}

/// Power used when the backend's value is missing or not an integer.
pub fn fallback_power(name: &str) -> u32 {
    (MIN_POWER as u64 + stable_hash64(name) % 31) as u32
}

/// The generated parts of a card, before it gets an id and provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CardDraft {
    pub name: String,
    pub description: String,
    pub power: u32,
    pub effect_description: String,
    pub player_line: String,
    pub king_line: String,
}

fn text_field(obj: &Map<String, Value>, key: &str) -> Option<String> {
    obj.get(key)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
}

pub fn parse_card(raw: &str) -> std::result::Result<CardDraft, ContractError> {
    let obj = first_json_object(raw).ok_or_else(|| ContractError::new("no JSON object found"))?;
    let name = text_field(&obj, "name").ok_or_else(|| ContractError::new("name must be a non-empty string"))?;
    let description =
        text_field(&obj, "description").ok_or_else(|| ContractError::new("description must be a non-empty string"))?;
    let name = truncate_chars(&name, MAX_NAME_CHARS).trim_end().to_owned();
    let description = truncate_chars(&description, MAX_DESCRIPTION_CHARS).trim_end().to_owned();
    let power = match obj.get("power").and_then(Value::as_i64) {
        Some(p) => p.clamp(MIN_POWER, MAX_POWER) as u32,
        None => fallback_power(&name),
    };
    let effect_description =
        text_field(&obj, "effect_description").unwrap_or_else(|| format!("The {name} strikes true."));
    let player_line = text_field(&obj, "player_line").unwrap_or_else(|| format!("Face the {name}, my king!"));
    let king_line = text_field(&obj, "king_line").unwrap_or_else(|| "You dare raise this against me?".to_owned());
    Ok(CardDraft {
        name,
        description,
        power,
        effect_description,
        player_line,
        king_line,
    })
}

fn card_request(session: &GameSession, detection: &Detection, ctx: &TurnContext<'_>) -> GenerationRequest {
    let canonical = ctx
        .lexicon
        .category(&detection.category)
        .map_or(detection.category.as_str(), |c| c.canonical.as_str());
    let system = format!(
        "You forge weapons out of stories. The storyteller in this tale is Shahrzad; the King is {king}. \
         Describe the weapon the King just mentioned as one JSON object and nothing else:\n\
         {{\"name\": \"<at most {MAX_NAME_CHARS} characters>\", \"description\": \"<at most {MAX_DESCRIPTION_CHARS} characters, rooted in the story>\", \
         \"power\": <integer from {MIN_POWER} to {MAX_POWER}>, \"effect_description\": \"<what happens when it is used>\", \
         \"player_line\": \"<what Shahrzad says as she wields it>\", \"king_line\": \"<the King's retort>\"}}",
        king = session.persona.name,
    );
    let user = format!(
        "The story record:\n{}\n\nThe King's words: {}\nCategory: {canonical}",
        render_transcript(&session.turns, ctx.transcript_budget),
        detection.sentence,
    );
    GenerationRequest::chat(Task::Card, system, vec![ChatMessage::user(user)])
        .with_temperature(CARD_TEMPERATURE)
        .with_seed(session.seed.wrapping_add(session.turns.len() as u64))
}

/// Asks the backend to describe the detected weapon and adds the card to
/// the session, wearing the current backdrop as artwork.
pub fn forge_card(session: &mut GameSession, detection: &Detection, ctx: &TurnContext<'_>) -> Result<WeaponCard> {
    if session.weapons.len() >= MAX_WEAPONS {
        return Err(Error::Capacity);
    }
    let draft = generate_structured(ctx.backend, card_request(session, detection, ctx), parse_card)?;
    let number = session.weapons.len() + 1;
    let card = WeaponCard {
        id: derived_uuid(&format!("{}|card|{number}", session.id)),
        category: detection.category.clone(),
        name: draft.name,
        description: draft.description,
        power: draft.power,
        effect_description: draft.effect_description,
        player_line: draft.player_line,
        king_line: draft.king_line,
        source_excerpt: detection.sentence.clone(),
        artwork: session.background.clone(),
    };
    session.weapons.push(card.clone());
    Ok(card)
}
