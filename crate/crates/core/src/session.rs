//! Per-session game state, the phase machine, and the co-creative turn loop.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::backend::{paint_scene, Backend, SceneImageRef, DEFAULT_STYLE_SUFFIX};
use crate::battle::{self, BattleOutcome, BattleState};
use crate::chronicle::EndingChronicle;
use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::forge::{self, WeaponCard, WeaponLexicon, MAX_WEAPONS};
use crate::king::{self, KingVerdict, PersonaConfig, VerdictKind, DEFAULT_TRANSCRIPT_BUDGET};

pub const SESSION_SCHEMA: u32 = 1;
pub const MAX_TURN_CHARS: usize = 2000;
pub const NEUTRAL_MOOD: u8 = 50;
/// Scene prompts take at most this much of the King's latest continuation.
pub const SCENE_EXCERPT_CHARS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Victory,
    /// The night ran out: the King's patience broke, or he survived the battle.
    Dawn,
    Abandoned,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Victory => "victory",
            Outcome::Dawn => "dawn",
            Outcome::Abandoned => "abandoned",
        }
    }
}

/// Serialized as `"storytelling"`, `"battle"`, `"ending"` or `"closed:<outcome>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Phase {
    Storytelling,
    Battle,
    Ending,
    Closed(Outcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event", content = "outcome")]
pub enum PhaseEvent {
    FourthWeapon,
    AngerLimit,
    AllCardsPlayed,
    Seal(Outcome),
    Abandon,
}

impl Phase {
    pub fn is_closed(self) -> bool {
        matches!(self, Phase::Closed(_))
    }

    /// The transition table. Repeating the event that produced a closed
    /// phase is a no-op; anything else out of a closed phase is illegal.
    pub fn on(self, event: PhaseEvent) -> Result<Phase> {
        use PhaseEvent::*;
        let next = match (self, event) {
            (Phase::Storytelling, FourthWeapon) => Phase::Battle,
            (Phase::Storytelling, AngerLimit) => Phase::Closed(Outcome::Dawn),
            (Phase::Battle, AllCardsPlayed) => Phase::Ending,
            (Phase::Ending, Seal(o @ (Outcome::Victory | Outcome::Dawn))) => Phase::Closed(o),
            (Phase::Closed(o), e) if terminal_target(e) == Some(o) => Phase::Closed(o),
            (Phase::Closed(_), _) => return Err(Error::IllegalTransition { from: self, event }),
            (_, Abandon) => Phase::Closed(Outcome::Abandoned),
            _ => return Err(Error::IllegalTransition { from: self, event }),
        };
        Ok(next)
    }
}

fn terminal_target(event: PhaseEvent) -> Option<Outcome> {
    match event {
        PhaseEvent::AngerLimit => Some(Outcome::Dawn),
        PhaseEvent::Seal(o @ (Outcome::Victory | Outcome::Dawn)) => Some(o),
        PhaseEvent::Abandon => Some(Outcome::Abandoned),
        _ => None,
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Storytelling => f.write_str("storytelling"),
            Phase::Battle => f.write_str("battle"),
            Phase::Ending => f.write_str("ending"),
            Phase::Closed(o) => write!(f, "closed:{}", o.as_str()),
        }
    }
}

impl From<Phase> for String {
    fn from(p: Phase) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for Phase {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        Ok(match s.as_str() {
            "storytelling" => Phase::Storytelling,
            "battle" => Phase::Battle,
            "ending" => Phase::Ending,
            "closed:victory" => Phase::Closed(Outcome::Victory),
            "closed:dawn" => Phase::Closed(Outcome::Dawn),
            "closed:abandoned" => Phase::Closed(Outcome::Abandoned),
            other => return Err(format!("unknown phase `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    Player,
    King,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryTurn {
    pub index: usize,
    pub author: Author,
    pub text: String,
    /// The King's reaction; only on player turns.
    pub verdict: Option<KingVerdict>,
    pub rejected: bool,
    /// Card forged from this King turn.
    pub materialized_card: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSession {
    pub schema: u32,
    pub id: String,
    pub seed: u64,
    pub phase: Phase,
    pub turns: Vec<StoryTurn>,
    pub mood: u8,
    pub anger_count: u32,
    pub persona: PersonaConfig,
    pub weapons: Vec<WeaponCard>,
    pub background: Option<SceneImageRef>,
    pub battle: Option<BattleState>,
    pub ending: Option<EndingChronicle>,
    /// Bumped on every committed mutation; pollers compare it.
    pub revision: u64,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl GameSession {
    pub fn new(id: String, seed: u64, persona: PersonaConfig, now: DateTime<Utc>) -> Self {
        GameSession {
            schema: SESSION_SCHEMA,
            id,
            seed,
            phase: Phase::Storytelling,
            turns: Vec::new(),
            mood: NEUTRAL_MOOD,
            anger_count: 0,
            persona,
            weapons: Vec::new(),
            background: None,
            battle: None,
            ending: None,
            revision: 0,
            created_at: now,
            updated_at: now,
        }
    }

    pub fn anger_limit(&self) -> u32 {
        self.persona.anger_limit
    }

    pub(crate) fn touch(&mut self, clock: &dyn Clock) {
        self.revision += 1;
        self.updated_at = clock.now();
    }

    pub(crate) fn require_phase(&self, phase: Phase, operation: &'static str) -> Result<()> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(Error::WrongPhase {
                phase: self.phase,
                operation,
            })
        }
    }

    fn push_turn(
        &mut self,
        author: Author,
        text: String,
        verdict: Option<KingVerdict>,
        rejected: bool,
    ) -> usize {
        let index = self.turns.len();
        self.turns.push(StoryTurn {
            index,
            author,
            text,
            verdict,
            rejected,
            materialized_card: None,
        });
        index
    }

    /// Every structural invariant of a session, checked at once.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        macro_rules! ensure {
            ($cond:expr, $($msg:tt)+) => {
                if !$cond {
                    return Err(format!($($msg)+));
                }
            };
        }
        ensure!(self.schema == SESSION_SCHEMA, "schema {}", self.schema);
        ensure!(self.mood <= 100, "mood {} out of range", self.mood);
        ensure!(self.weapons.len() <= MAX_WEAPONS, "{} weapons", self.weapons.len());
        if self.phase == Phase::Battle {
            ensure!(self.weapons.len() == MAX_WEAPONS, "battle with {} weapons", self.weapons.len());
        }
        if self.battle.is_some() {
            ensure!(
                matches!(self.phase, Phase::Battle | Phase::Ending | Phase::Closed(_)),
                "battle present in phase {}",
                self.phase
            );
        }
        let battle_outcome = self.battle.as_ref().and_then(|b| b.outcome);
        if self.phase == Phase::Ending {
            ensure!(battle_outcome.is_some(), "ending phase without battle outcome");
        }
        if self.ending.is_some() {
            ensure!(
                matches!(self.phase, Phase::Ending | Phase::Closed(_)) && battle_outcome.is_some(),
                "ending present without resolved battle (phase {})",
                self.phase
            );
        }
        match self.phase {
            Phase::Closed(Outcome::Victory) => {
                ensure!(battle_outcome == Some(BattleOutcome::Victory), "victory without a won battle");
                ensure!(self.ending.is_some(), "victory without ending");
            }
            Phase::Closed(Outcome::Dawn) if self.battle.is_some() => {
                ensure!(battle_outcome == Some(BattleOutcome::Defeat), "dawn after a won battle");
                ensure!(self.ending.is_some(), "battle dawn without ending");
            }
            Phase::Closed(Outcome::Dawn) => {
                ensure!(self.anger_count >= self.anger_limit(), "dawn before anger limit");
            }
            _ => {}
        }
        if let Some(b) = &self.battle {
            b.check_invariants(&self.weapons)?;
        }
        for card in &self.weapons {
            card.check_invariants()?;
        }

        let mut angry = 0;
        for (i, turn) in self.turns.iter().enumerate() {
            ensure!(turn.index == i, "turn {} has index {}", i, turn.index);
            let n = turn.text.chars().count();
            ensure!((1..=MAX_TURN_CHARS).contains(&n), "turn {} has {} chars", i, n);
            let expected = if i % 2 == 0 { Author::Player } else { Author::King };
            ensure!(turn.author == expected, "turn {} authored by {:?}", i, turn.author);
            match turn.author {
                Author::Player => {
                    let Some(v) = &turn.verdict else {
                        return Err(format!("player turn {i} lacks a verdict"));
                    };
                    v.check_invariants()?;
                    ensure!(turn.rejected == (v.kind != VerdictKind::Continue), "turn {} rejected flag", i);
                    ensure!(turn.materialized_card.is_none(), "player turn {} forged a card", i);
                    if v.kind == VerdictKind::AngryCorrect {
                        angry += 1;
                    }
                }
                Author::King => {
                    ensure!(turn.verdict.is_none() && !turn.rejected, "king turn {} carries a verdict", i);
                    if let Some(card) = &turn.materialized_card {
                        ensure!(
                            self.weapons.iter().any(|w| &w.id == card),
                            "king turn {} references missing card {}",
                            i,
                            card
                        );
                    }
                }
            }
        }
        ensure!(self.turns.len().is_multiple_of(2), "dangling player turn");
        ensure!(angry == self.anger_count, "anger_count {} but {} angry verdicts", self.anger_count, angry);
        let forged = self.turns.iter().filter(|t| t.materialized_card.is_some()).count();
        ensure!(forged == self.weapons.len(), "{} cards forged, {} held", forged, self.weapons.len());
        Ok(())
    }
}

/// Moves the session along the phase machine, checking the guard each
/// transition needs so the session stays consistent.
pub fn advance_phase(session: &mut GameSession, event: PhaseEvent) -> Result<Phase> {
    let next = session.phase.on(event)?;
    if next == session.phase {
        return Ok(next);
    }
    let outcome = session.battle.as_ref().and_then(|b| b.outcome);
    let guard = match event {
        PhaseEvent::FourthWeapon => session.weapons.len() == MAX_WEAPONS,
        PhaseEvent::AngerLimit => session.anger_count >= session.anger_limit(),
        PhaseEvent::AllCardsPlayed => outcome.is_some(),
        PhaseEvent::Seal(Outcome::Victory) => {
            session.ending.is_some() && outcome == Some(BattleOutcome::Victory)
        }
        PhaseEvent::Seal(_) => session.ending.is_some() && outcome == Some(BattleOutcome::Defeat),
        PhaseEvent::Abandon => true,
    };
    if !guard {
        return Err(Error::IllegalTransition {
            from: session.phase,
            event,
        });
    }
    session.phase = next;
    Ok(next)
}

/// What a turn needs from the outside world.
pub struct TurnContext<'a> {
    pub backend: &'a dyn Backend,
    pub lexicon: &'a WeaponLexicon,
    pub clock: &'a dyn Clock,
    pub transcript_budget: usize,
    pub style_suffix: &'a str,
}

impl<'a> TurnContext<'a> {
    pub fn new(backend: &'a dyn Backend, lexicon: &'a WeaponLexicon, clock: &'a dyn Clock) -> Self {
        TurnContext {
            backend,
            lexicon,
            clock,
            transcript_budget: DEFAULT_TRANSCRIPT_BUDGET,
            style_suffix: DEFAULT_STYLE_SUFFIX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub verdict: KingVerdict,
    pub king_text: String,
    pub new_card: Option<WeaponCard>,
    pub phase: Phase,
    pub mood: u8,
    pub anger_count: u32,
}

/// Trims and length-checks player prose.
pub fn validate_player_text(text: &str) -> Result<&str> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::EmptyText);
    }
    let len = trimmed.chars().count();
    if len > MAX_TURN_CHARS {
        return Err(Error::TextTooLong {
            len,
            max: MAX_TURN_CHARS,
        });
    }
    Ok(trimmed)
}

pub(crate) fn truncate_chars(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// One exchange of the co-creative loop.
///
/// On error the session may be partially modified; callers that need
/// all-or-nothing semantics run this on a copy (the engine does).
pub fn submit_player_turn(
    session: &mut GameSession,
    text: &str,
    ctx: &TurnContext<'_>,
) -> Result<TurnOutcome> {
    session.require_phase(Phase::Storytelling, "submit_player_turn")?;
    let text = validate_player_text(text)?;

    let bundle = king::build_evaluation_prompt_with_budget(
        &session.persona,
        &session.turns,
        text,
        ctx.transcript_budget,
    );
    let verdict = king::evaluate(ctx.backend, &bundle, session.seed, session.turns.len())?;

    let rejected = verdict.kind != VerdictKind::Continue;
    session.push_turn(Author::Player, text.to_owned(), Some(verdict.clone()), rejected);
    session.mood = king::apply_mood(session.mood, &verdict);

    let mut new_card = None;
    let king_text = match verdict.kind {
        VerdictKind::Continue => {
            let prose = verdict.continuation.as_deref().unwrap_or_default().trim();
            let prose = truncate_chars(prose, MAX_TURN_CHARS).to_owned();
            let king_index = session.push_turn(Author::King, prose.clone(), None, false);
            if session.weapons.len() < MAX_WEAPONS {
                if let Some(detection) = forge::detect_keyword(&prose, ctx.lexicon) {
                    new_card = materialize(session, &detection, &prose, king_index, ctx)?;
                }
            }
            if session.weapons.len() == MAX_WEAPONS {
                advance_phase(session, PhaseEvent::FourthWeapon)?;
                battle::start_battle(session)?;
            }
            prose
        }
        VerdictKind::Rephrase | VerdictKind::AngryCorrect => {
            let comment = verdict.comment.trim();
            let line = if comment.is_empty() {
                "The King waves his hand, unimpressed."
            } else {
                truncate_chars(comment, MAX_TURN_CHARS)
            };
            session.push_turn(Author::King, line.to_owned(), None, false);
            if verdict.kind == VerdictKind::AngryCorrect {
                session.anger_count += 1;
                if session.anger_count >= session.anger_limit() {
                    advance_phase(session, PhaseEvent::AngerLimit)?;
                }
            }
            line.to_owned()
        }
    };

    session.touch(ctx.clock);
    Ok(TurnOutcome {
        verdict,
        king_text,
        new_card,
        phase: session.phase,
        mood: session.mood,
        anger_count: session.anger_count,
    })
}

/// Forges a card from the detection and repaints the scene for it.
/// A card the backend cannot describe is skipped; the turn stands.
fn materialize(
    session: &mut GameSession,
    detection: &forge::Detection,
    prose: &str,
    king_index: usize,
    ctx: &TurnContext<'_>,
) -> Result<Option<WeaponCard>> {
    let card = match forge::forge_card(session, detection, ctx) {
        Ok(card) => card,
        Err(Error::Contract(e)) => {
            tracing::warn!(session = %session.id, "card skipped: {e}");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    session.turns[king_index].materialized_card = Some(card.id.clone());

    let excerpt = truncate_chars(prose, SCENE_EXCERPT_CHARS);
    match paint_scene(ctx.backend, excerpt, ctx.style_suffix, session.seed) {
        Ok(scene) => {
            session.background = Some(scene.clone());
            if let Some(held) = session.weapons.iter_mut().find(|w| w.id == card.id) {
                held.artwork = Some(scene);
            }
        }
        Err(e) => tracing::warn!(session = %session.id, "scene repaint failed, keeping backdrop: {e}"),
    }
    Ok(session.weapons.iter().find(|w| w.id == card.id).cloned())
}

/// Ends the session early at the player's request.
pub fn abandon(session: &mut GameSession, clock: &dyn Clock) -> Result<Phase> {
    let before = session.phase;
    let phase = advance_phase(session, PhaseEvent::Abandon)?;
    if phase != before {
        session.touch(clock);
    }
    Ok(phase)
}
