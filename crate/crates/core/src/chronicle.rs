//! The bardic ending and the storybook that records a whole playthrough.

use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{generate_structured, ChatMessage, GenerationRequest, Task};
use crate::battle::{BattleOutcome, BattleState};
use crate::clock::Clock;
use crate::error::{ContractError, Error, Result};
use crate::extract::{first_json_object, strip_fences};
use crate::forge::WeaponCard;
use crate::session::{advance_phase, truncate_chars, Author, GameSession, Outcome, Phase, PhaseEvent, StoryTurn, TurnContext};

pub const STORYBOOK_SCHEMA: u32 = 1;
pub const ENDING_ACTIONS: usize = 4;
pub const MAX_TITLE_CHARS: usize = 80;
pub const ENDING_TEMPERATURE: f32 = 0.2;
pub const HEROINE: &str = "Shahrzad";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndingChronicle {
    pub actions: Vec<String>,
    pub downfall: String,
    pub title: String,
    pub narration: String,
}

impl EndingChronicle {
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.actions.len() != ENDING_ACTIONS {
            return Err(format!("ending has {} actions", self.actions.len()));
        }
        if self.actions.iter().any(|a| a.trim().is_empty())
            || self.downfall.trim().is_empty()
            || self.title.trim().is_empty()
            || self.narration.trim().is_empty()
        {
            return Err("ending has an empty field".into());
        }
        if self.title.chars().count() > MAX_TITLE_CHARS {
            return Err("ending title too long".into());
        }
        Ok(())
    }
}

fn required_text(obj: &serde_json::Map<String, Value>, key: &str) -> std::result::Result<String, ContractError> {
    obj.get(key)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .ok_or_else(|| ContractError::new(format!("{key} must be a non-empty string")))
}

pub fn parse_ending(raw: &str) -> std::result::Result<EndingChronicle, ContractError> {
    let obj = first_json_object(raw).ok_or_else(|| ContractError::new("no JSON object found"))?;
    let actions = obj
        .get("actions")
        .and_then(Value::as_array)
        .ok_or_else(|| ContractError::new("actions must be an array of strings"))?;
    if actions.len() != ENDING_ACTIONS {
        return Err(ContractError::new(format!("actions must have length {ENDING_ACTIONS}")));
    }
    let actions = actions
        .iter()
        .map(|a| {
            a.as_str()
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .ok_or_else(|| ContractError::new("every action must be a non-empty string"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let title = required_text(&obj, "title")?;
    Ok(EndingChronicle {
        actions,
        downfall: required_text(&obj, "downfall")?,
        title: truncate_chars(&title, MAX_TITLE_CHARS).trim_end().to_owned(),
        narration: required_text(&obj, "narration")?,
    })
}

fn card_name<'a>(cards: &'a [WeaponCard], id: &str) -> &'a str {
    cards.iter().find(|c| c.id == id).map_or("a nameless weapon", |c| c.name.as_str())
}

/// The ending used when the backend cannot produce one. Built only from
/// battle data, so it always exists.
pub fn template_ending(session: &GameSession) -> EndingChronicle {
    let king = &session.persona.name;
    let battle = session.battle.clone().unwrap_or_default();
    let mut actions: Vec<String> = battle
        .plays
        .iter()
        .map(|p| {
            format!(
                "{HEROINE} struck with {}, and the King's strength fell to {}.",
                card_name(&session.weapons, &p.card_id),
                p.king_hp_after
            )
        })
        .collect();
    while actions.len() < ENDING_ACTIONS {
        actions.push(format!("{HEROINE} held her ground."));
    }
    let victory = battle.outcome == Some(BattleOutcome::Victory);
    let (downfall, title) = if victory {
        (
            format!("{king} slid from his throne, his pride spent before the first light."),
            format!("{HEROINE}, Breaker of the Throne"),
        )
    } else {
        (
            format!("{king} stood unbowed, yet the tale had bought {HEROINE} one more dawn."),
            format!("{HEROINE}, Who Outlasted the Night"),
        )
    };
    let narration = format!("{} {downfall}", actions.join(" "));
    EndingChronicle {
        actions,
        downfall,
        title,
        narration,
    }
}

fn ending_request(session: &GameSession, ctx: &TurnContext<'_>) -> GenerationRequest {
    let battle = session.battle.as_ref();
    let victory = battle.and_then(|b| b.outcome) == Some(BattleOutcome::Victory);
    let system = format!(
        "You are a bard closing the tale of {HEROINE} and King {king}. Sing of it in rich, rhythmic language. \
         {outcome}\n\
         Reply with one JSON object and nothing else:\n\
         {{\"actions\": [four strings, one per weapon in the order it was used], \
         \"downfall\": \"<{fate}>\", \"title\": \"<an honorific for {HEROINE}, at most {MAX_TITLE_CHARS} characters>\", \
         \"narration\": \"<the full bardic ending>\"}}",
        king = session.persona.name,
        outcome = if victory {
            "The storyteller won: the King falls."
        } else {
            "The storyteller's weapons fell short: the King survives, and she lives to see the dawn."
        },
        fate = if victory { "the King's downfall" } else { "how the King survived" },
    );
    let mut user = String::from("The story:\n");
    user.push_str(&crate::king::render_transcript(&session.turns, ctx.transcript_budget));
    user.push_str("\n\nThe battle, blow by blow:\n");
    for (i, play) in battle.map(|b| b.plays.as_slice()).unwrap_or_default().iter().enumerate() {
        let _ = writeln!(
            user,
            "{}. {} ({} damage, King HP {}): {}",
            i + 1,
            card_name(&session.weapons, &play.card_id),
            play.damage,
            play.king_hp_after,
            play.effect_description
        );
    }
    GenerationRequest::chat(Task::Ending, system, vec![ChatMessage::user(user)])
        .with_temperature(ENDING_TEMPERATURE)
        .with_max_tokens(2048)
        .with_seed(session.seed)
}

/// Writes the finale. Falls back to [`template_ending`] on any backend or
/// contract failure, so a resolved battle always gets an ending.
pub fn generate_ending(session: &mut GameSession, ctx: &TurnContext<'_>) -> Result<EndingChronicle> {
    session.require_phase(Phase::Ending, "generate_ending")?;
    if session.battle.as_ref().and_then(|b| b.outcome).is_none() {
        return Err(Error::WrongPhase {
            phase: session.phase,
            operation: "generate_ending",
        });
    }
    if let Some(ending) = &session.ending {
        return Ok(ending.clone());
    }
    let ending = match generate_structured(ctx.backend, ending_request(session, ctx), parse_ending) {
        Ok(ending) => ending,
        Err(e) => {
            tracing::warn!(session = %session.id, "ending fell back to template: {e}");
            template_ending(session)
        }
    };
    session.ending = Some(ending.clone());
    session.touch(ctx.clock);
    Ok(ending)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorybookOutcome {
    Victory,
    /// The battle was lost; the King lives and so does the storyteller.
    Defeat,
    /// The King's patience ran out before any battle.
    Dawn,
    Abandoned,
}

impl StorybookOutcome {
    pub fn label(self) -> &'static str {
        match self {
            StorybookOutcome::Victory => "victory",
            StorybookOutcome::Defeat => "defeat",
            StorybookOutcome::Dawn => "dawn",
            StorybookOutcome::Abandoned => "abandoned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Storybook {
    pub schema: u32,
    pub session_id: String,
    pub seed: u64,
    pub created_at: DateTime<Utc>,
    pub outcome: StorybookOutcome,
    pub turns: Vec<StoryTurn>,
    pub weapons: Vec<WeaponCard>,
    /// Absent when the session closed before any battle.
    pub battle: Option<BattleState>,
    pub ending: Option<EndingChronicle>,
}

impl Storybook {
    /// Key-sorted, pretty-printed JSON with a trailing newline.
    pub fn to_canonical_json(&self) -> String {
        // serde_json's default map is a BTreeMap, so going through Value sorts keys
        let value = serde_json::to_value(self).expect("storybook serializes");
        let mut out = serde_json::to_string_pretty(&value).expect("value serializes");
        out.push('\n');
        out
    }
}

/// Closes a finished session and captures it as a storybook. Files are the
/// engine's concern; this only builds the record.
pub fn assemble_storybook(session: &mut GameSession, clock: &dyn Clock) -> Result<Storybook> {
    if session.phase == Phase::Ending && session.ending.is_some() {
        let victory = session.battle.as_ref().and_then(|b| b.outcome) == Some(BattleOutcome::Victory);
        let outcome = if victory { Outcome::Victory } else { Outcome::Dawn };
        advance_phase(session, PhaseEvent::Seal(outcome))?;
        session.touch(clock);
    }
    let outcome = match session.phase {
        Phase::Closed(Outcome::Victory) => StorybookOutcome::Victory,
        Phase::Closed(Outcome::Dawn) if session.battle.is_some() => StorybookOutcome::Defeat,
        Phase::Closed(Outcome::Dawn) => StorybookOutcome::Dawn,
        Phase::Closed(Outcome::Abandoned) => StorybookOutcome::Abandoned,
        phase => {
            return Err(Error::WrongPhase {
                phase,
                operation: "assemble_storybook",
            })
        }
    };
    Ok(Storybook {
        schema: STORYBOOK_SCHEMA,
        session_id: session.id.clone(),
        seed: session.seed,
        created_at: clock.now(),
        outcome,
        turns: session.turns.clone(),
        weapons: session.weapons.clone(),
        battle: session.battle.clone(),
        ending: session.ending.clone(),
    })
}

fn prose(s: &str) -> String {
    strip_fences(s).trim().to_owned()
}

fn cell(s: &str) -> String {
    prose(s).replace('\n', " ").replace('|', "\\|")
}

pub fn render_markdown(book: &Storybook) -> String {
    let mut md = String::new();
    let title = book
        .ending
        .as_ref()
        .map_or_else(|| "A Tale Left Unfinished".to_owned(), |e| prose(&e.title));
    let _ = writeln!(md, "# {title}\n");
    let _ = writeln!(
        md,
        "_Session `{}` · seed {} · outcome: {}_\n",
        book.session_id,
        book.seed,
        book.outcome.label()
    );

    md.push_str("## The Storytelling\n\n");
    for turn in &book.turns {
        match turn.author {
            Author::Player => {
                let text = prose(&turn.text);
                if turn.rejected {
                    let _ = writeln!(md, "**{HEROINE}:** ~~{}~~\n", text.replace('\n', " "));
                } else {
                    let _ = writeln!(md, "**{HEROINE}:** {text}\n");
                }
                if let Some(v) = &turn.verdict {
                    let comment = prose(&v.comment);
                    if !comment.is_empty() && !turn.rejected {
                        let _ = writeln!(md, "> _The King ({}, mood {:+}):_ {comment}\n", v.kind.as_str(), v.mood_delta);
                    } else {
                        let _ = writeln!(md, "> _The King ({}, mood {:+})_\n", v.kind.as_str(), v.mood_delta);
                    }
                }
            }
            Author::King => {
                let _ = writeln!(md, "**The King:** {}\n", prose(&turn.text));
                if let Some(card) = &turn.materialized_card {
                    let _ = writeln!(md, "_A weapon takes shape: `{card}`_\n");
                }
            }
        }
    }

    md.push_str("## Weapons Forged\n\n");
    if book.weapons.is_empty() {
        md.push_str("_No weapon was forged._\n\n");
    } else {
        md.push_str("| # | Weapon | Card id | Category | Power | Description |\n");
        md.push_str("|---|---|---|---|---|---|\n");
        for (i, c) in book.weapons.iter().enumerate() {
            let _ = writeln!(
                md,
                "| {} | {} | `{}` | {} | {} | {} |",
                i + 1,
                cell(&c.name),
                c.id,
                c.category,
                c.power,
                cell(&c.description)
            );
        }
        md.push('\n');
    }

    if let Some(battle) = &book.battle {
        md.push_str("## The Battle\n\n");
        for (i, p) in battle.plays.iter().enumerate() {
            let name = card_name(&book.weapons, &p.card_id);
            let _ = writeln!(
                md,
                "{}. **{}** deals {} damage, King HP {}.\n   - {HEROINE}: \"{}\"\n   - The King: \"{}\"\n   - {}",
                i + 1,
                prose(name),
                p.damage,
                p.king_hp_after,
                cell(&p.player_line),
                cell(&p.king_line),
                cell(&p.effect_description)
            );
        }
        if let Some(outcome) = battle.outcome {
            let _ = writeln!(
                md,
                "\nResult: **{}**\n",
                match outcome {
                    BattleOutcome::Victory => "victory",
                    BattleOutcome::Defeat => "defeat",
                }
            );
        } else {
            md.push('\n');
        }
    }

    if let Some(ending) = &book.ending {
        md.push_str("## The Ending\n\n");
        for (i, a) in ending.actions.iter().enumerate() {
            let _ = writeln!(md, "{}. {}", i + 1, prose(a));
        }
        let _ = writeln!(md, "\n**Downfall.** {}\n", prose(&ending.downfall));
        let _ = writeln!(md, "**Title bestowed:** {}\n", prose(&ending.title));
        let _ = writeln!(md, "{}", prose(&ending.narration));
    } else if book.outcome == StorybookOutcome::Dawn {
        md.push_str("## Dawn\n\nThe King's patience ran out, and the night ended without a battle.\n");
    }
    md
}
