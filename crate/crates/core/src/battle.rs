//! The four-card confrontation with the King.
//!
//! Damage is the card's power, subtracted from the King's 100 HP and floored
//! at zero. The King never strikes back. All dialogue was written when the
//! card was forged; nothing here calls a backend.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::{WeaponCard, MAX_WEAPONS};
use crate::session::{advance_phase, GameSession, Phase, PhaseEvent};

pub const KING_MAX_HP: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BattleOutcome {
    Victory,
    Defeat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BattlePlay {
    pub card_id: String,
    pub damage: u32,
    pub player_line: String,
    pub king_line: String,
    pub effect_description: String,
    pub king_hp_after: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BattleState {
    pub king_hp: u32,
    pub round: u32,
    pub plays: Vec<BattlePlay>,
    pub outcome: Option<BattleOutcome>,
}

impl Default for BattleState {
    fn default() -> Self {
        BattleState {
            king_hp: KING_MAX_HP,
            round: 0,
            plays: Vec::new(),
            outcome: None,
        }
    }
}

impl BattleState {
    pub fn is_played(&self, card_id: &str) -> bool {
        self.plays.iter().any(|p| p.card_id == card_id)
    }

    pub fn check_invariants(&self, cards: &[WeaponCard]) -> std::result::Result<(), String> {
        if self.round as usize != self.plays.len() || self.plays.len() > MAX_WEAPONS {
            return Err(format!("round {} with {} plays", self.round, self.plays.len()));
        }
        if self.outcome.is_some() != (self.plays.len() == MAX_WEAPONS) {
            return Err(format!("outcome {:?} after {} plays", self.outcome, self.plays.len()));
        }
        let mut seen = HashSet::new();
        let mut hp = KING_MAX_HP;
        for play in &self.plays {
            if !seen.insert(play.card_id.as_str()) {
                return Err(format!("card {} played twice", play.card_id));
            }
            let card = cards
                .iter()
                .find(|c| c.id == play.card_id)
                .ok_or_else(|| format!("play of unknown card {}", play.card_id))?;
            if play.damage != card.power {
                return Err(format!("card {} dealt {} with power {}", card.id, play.damage, card.power));
            }
            hp = hp.saturating_sub(play.damage);
            if play.king_hp_after != hp {
                return Err(format!("hp after {} is {}, expected {hp}", play.card_id, play.king_hp_after));
            }
        }
        if self.king_hp != hp {
            return Err(format!("king_hp {} but plays leave {hp}", self.king_hp));
        }
        Ok(())
    }
}

/// The outcome a finished battle reaches from these card powers.
pub fn resolve(powers: &[u32]) -> (u32, BattleOutcome) {
    let dealt: u32 = powers.iter().sum();
    let hp = KING_MAX_HP.saturating_sub(dealt);
    (hp, if hp == 0 { BattleOutcome::Victory } else { BattleOutcome::Defeat })
}

pub fn start_battle(session: &mut GameSession) -> Result<&BattleState> {
    if session.phase != Phase::Battle || session.weapons.len() != MAX_WEAPONS || session.battle.is_some() {
        return Err(Error::WrongPhase {
            phase: session.phase,
            operation: "start_battle",
        });
    }
    Ok(session.battle.insert(BattleState::default()))
}

/// Plays one held card. The fourth play settles the outcome and moves the
/// session to the ending.
pub fn play_card(session: &mut GameSession, card_id: &str) -> Result<BattlePlay> {
    let wrong_phase = Error::WrongPhase {
        phase: session.phase,
        operation: "play_card",
    };
    if session.phase != Phase::Battle {
        return Err(wrong_phase);
    }
    let card = session
        .weapons
        .iter()
        .find(|c| c.id == card_id)
        .ok_or_else(|| Error::UnknownCard(card_id.to_owned()))?
        .clone();
    let battle = session.battle.as_mut().ok_or(wrong_phase)?;
    if battle.is_played(card_id) {
        return Err(Error::AlreadyPlayed(card_id.to_owned()));
    }

    battle.king_hp = battle.king_hp.saturating_sub(card.power);
    battle.round += 1;
    let play = BattlePlay {
        card_id: card.id,
        damage: card.power,
        player_line: card.player_line,
        king_line: card.king_line,
        effect_description: card.effect_description,
        king_hp_after: battle.king_hp,
    };
    battle.plays.push(play.clone());

    if battle.plays.len() == MAX_WEAPONS {
        battle.outcome = Some(if battle.king_hp == 0 {
            BattleOutcome::Victory
        } else {
            BattleOutcome::Defeat
        });
        advance_phase(session, PhaseEvent::AllCardsPlayed)?;
    }
    Ok(play)
}
