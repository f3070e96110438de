//! Independent reference implementations and input generators.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Value};

use nights_core::backend::ScriptedBackend;
use nights_core::battle::{self, BattleOutcome};
use nights_core::chronicle;
use nights_core::clock::FixedClock;
use nights_core::forge::WeaponLexicon;
use nights_core::king::{KingVerdict, VerdictKind, MAX_MOOD_DELTA, MIN_MOOD_DELTA};
use nights_core::session::{self, GameSession, Outcome, Phase, PhaseEvent, TurnContext};
use nights_core::Error;

// ---------------------------------------------------------------- keywords

fn same_letter(a: char, b: char) -> bool {
    let lower = |c: char| {
        let l: Vec<char> = c.to_lowercase().collect();
        if l.len() == 1 {
            l[0]
        } else {
            c
        }
    };
    lower(a) == lower(b)
}

fn glues(c: Option<&char>) -> bool {
    c.is_some_and(|&c| c.is_alphanumeric() || c == '_')
}

/// Every whole-word, case-insensitive occurrence of every term; the winner
/// is the earliest, then the longest, then the first in lexicon order.
/// Returns (char offset, category id, term).
pub fn brute_force_detect(text: &str, lexicon: &WeaponLexicon) -> Option<(usize, String, String)> {
    let chars: Vec<char> = text.chars().collect();
    let mut hits = Vec::new();
    let mut order = 0usize;
    for category in &lexicon.categories {
        let mut terms = vec![category.canonical.clone()];
        terms.extend(category.synonyms.iter().cloned());
        for term in terms {
            let t: Vec<char> = term.chars().collect();
            if !t.is_empty() && t.len() <= chars.len() {
                for start in 0..=chars.len() - t.len() {
                    let matches = (0..t.len()).all(|k| same_letter(chars[start + k], t[k]));
                    let before = if start == 0 { None } else { chars.get(start - 1) };
                    let after = chars.get(start + t.len());
                    if matches && !glues(before) && !glues(after) {
                        hits.push((start, usize::MAX - t.len(), order, category.id.clone(), term.clone()));
                    }
                }
            }
            order += 1;
        }
    }
    hits.sort();
    hits.into_iter().next().map(|(offset, _, _, category, term)| (offset, category, term))
}

const FILLER: &[&str] = &[
    "the", "King", "listened", "and", "a", "merchant", "of", "Basra", "swordsmanship", "swordfish", "shielded",
    "daggers", "knives", "axes", "bowl", "elbow", "hammered", "spearmint", "swords_", "_sword", "sword1",
    "lancer", "blades", "épée", "naïve", "Straße", "İstanbul",
];
const PUNCT: &[&str] = &[" ", " ", " ", ", ", ". ", "! ", "? ", "; ", " (", ") ", "\"", "-", "'", "…", "\n", "/"];

fn random_case(rng: &mut impl Rng, word: &str) -> String {
    match rng.random_range(0..4) {
        0 => word.to_uppercase(),
        1 => word.to_lowercase(),
        2 => word
            .chars()
            .map(|c| if rng.random_bool(0.5) { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
            .collect(),
        _ => word.to_owned(),
    }
}

/// Texts mixing weapon terms, near-misses glued to letters, punctuation
/// and mixed case.
pub fn random_keyword_text(rng: &mut impl Rng, lexicon: &WeaponLexicon) -> String {
    let terms: Vec<String> = lexicon
        .categories
        .iter()
        .flat_map(|c| std::iter::once(c.canonical.clone()).chain(c.synonyms.iter().cloned()))
        .collect();
    let words = rng.random_range(0..14);
    let mut text = String::new();
    for _ in 0..words {
        let word = match rng.random_range(0..10) {
            0..=2 => terms.choose(rng).unwrap().clone(),
            3 => format!("{}{}", terms.choose(rng).unwrap(), ["s", "smanship", "ed", "_", "1"].choose(rng).unwrap()),
            4 => format!("{}{}", ["x", "_", "9", "é"].choose(rng).unwrap(), terms.choose(rng).unwrap()),
            _ => FILLER.choose(rng).unwrap().to_string(),
        };
        text.push_str(&random_case(rng, &word));
        text.push_str(PUNCT.choose(rng).unwrap());
    }
    text
}

// ------------------------------------------------------------------ battle

/// Damage is cumulative and order-free: the King survives with whatever
/// power did not reach him, never below zero.
pub fn battle_oracle(powers: &[u32]) -> (u32, BattleOutcome) {
    let total: u32 = powers.iter().sum();
    let hp = 100u32.saturating_sub(total);
    (hp, if total >= 100 { BattleOutcome::Victory } else { BattleOutcome::Defeat })
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

// ----------------------------------------------------------------- verdict

/// Properties every accepted verdict must have, written out directly.
pub fn verdict_is_sound(v: &KingVerdict) -> Result<(), String> {
    if !(MIN_MOOD_DELTA..=MAX_MOOD_DELTA).contains(&v.mood_delta) {
        return Err(format!("delta {}", v.mood_delta));
    }
    match v.kind {
        VerdictKind::Continue if v.continuation.as_deref().is_none_or(|c| c.trim().is_empty()) => {
            Err("continue without prose".into())
        }
        VerdictKind::Rephrase | VerdictKind::AngryCorrect if v.continuation.is_some() => {
            Err("rejection with prose".into())
        }
        VerdictKind::AngryCorrect if v.mood_delta >= 0 => Err("angry but pleased".into()),
        _ => v.check_invariants(),
    }
}

fn random_string(rng: &mut impl Rng, max: usize) -> String {
    let alphabet: Vec<char> = "abcXYZ {}[]\":,\\/\n\t0123456789-.éß漢🙂`".chars().collect();
    let n = rng.random_range(0..=max);
    (0..n).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

fn random_json(rng: &mut impl Rng, depth: u32) -> Value {
    match rng.random_range(0..if depth == 0 { 5 } else { 7 }) {
        0 => Value::Null,
        1 => json!(rng.random_bool(0.5)),
        2 => json!(rng.random_range(-1_000_000i64..1_000_000)),
        3 => json!(rng.random_range(-100.0f64..100.0)),
        4 => json!(random_string(rng, 12)),
        5 => Value::Array((0..rng.random_range(0..4)).map(|_| random_json(rng, depth - 1)).collect()),
        _ => Value::Object(
            (0..rng.random_range(0..4))
                .map(|_| (random_string(rng, 6), random_json(rng, depth - 1)))
                .collect(),
        ),
    }
}

fn random_field(rng: &mut impl Rng, key: &str) -> Value {
    match (key, rng.random_range(0..3)) {
        ("kind", 0) => json!(["continue", "rephrase", "angry", "Angry_Correct", "CONTINUE", "accept", "shrug"]
            .choose(rng)
            .unwrap()),
        ("mood_delta", 0) => json!(rng.random_range(-100i64..100)),
        ("mood_delta", 1) => json!(format!("{}", rng.random_range(-50..50))),
        (_, 0) | (_, 1) => json!(random_string(rng, 30)),
        _ => random_json(rng, 2),
    }
}

/// Random bytes, random JSON objects with verdict-like fields, and
/// mutated copies of well-formed verdicts wrapped in prose or fences.
pub fn fuzz_verdict_input(rng: &mut impl Rng) -> String {
    match rng.random_range(0..4) {
        0 => random_string(rng, 80),
        1 => {
            let mut obj = serde_json::Map::new();
            for key in ["kind", "comment", "continuation", "mood_delta"] {
                if rng.random_bool(0.8) {
                    obj.insert(key.to_owned(), random_field(rng, key));
                }
            }
            Value::Object(obj).to_string()
        }
        _ => {
            let mut raw: Vec<char> = valid_verdict(rng).to_wire().chars().collect();
            for _ in 0..rng.random_range(0..4) {
                let alphabet: Vec<char> = "{}\":,x\\ 1-".chars().collect();
                let at = rng.random_range(0..=raw.len());
                match rng.random_range(0..3) {
                    0 => raw.insert(at, *alphabet.choose(rng).unwrap()),
                    1 if at < raw.len() => {
                        raw.remove(at);
                    }
                    _ if at < raw.len() => raw[at] = *alphabet.choose(rng).unwrap(),
                    _ => {}
                }
            }
            let body: String = raw.into_iter().collect();
            match rng.random_range(0..3) {
                0 => body,
                1 => format!("The King says:\n```json\n{body}\n```\nThat is all."),
                _ => format!("{} {body} {}", random_string(rng, 10), random_string(rng, 10)),
            }
        }
    }
}

/// A verdict that satisfies the contract.
pub fn valid_verdict(rng: &mut impl Rng) -> KingVerdict {
    let kind = *[VerdictKind::Continue, VerdictKind::Rephrase, VerdictKind::AngryCorrect].choose(rng).unwrap();
    let mood_delta = match kind {
        VerdictKind::AngryCorrect => rng.random_range(MIN_MOOD_DELTA..0),
        _ => rng.random_range(MIN_MOOD_DELTA..=MAX_MOOD_DELTA),
    };
    let continuation = (kind == VerdictKind::Continue).then(|| format!("x{}", random_string(rng, 40)));
    KingVerdict {
        kind,
        comment: random_string(rng, 40),
        continuation,
        mood_delta,
    }
}

// ----------------------------------------------------------- state machine

fn transition_model(from: Phase, event: PhaseEvent) -> Option<Phase> {
    use Outcome::*;
    use Phase::*;
    use PhaseEvent::*;
    let allowed: &[(Phase, PhaseEvent, Phase)] = &[
        (Storytelling, FourthWeapon, Battle),
        (Storytelling, AngerLimit, Closed(Dawn)),
        (Storytelling, Abandon, Closed(Abandoned)),
        (Battle, AllCardsPlayed, Ending),
        (Battle, Abandon, Closed(Abandoned)),
        (Ending, Seal(Victory), Closed(Victory)),
        (Ending, Seal(Dawn), Closed(Dawn)),
        (Ending, Abandon, Closed(Abandoned)),
        (Closed(Victory), Seal(Victory), Closed(Victory)),
        (Closed(Dawn), Seal(Dawn), Closed(Dawn)),
        (Closed(Dawn), AngerLimit, Closed(Dawn)),
        (Closed(Abandoned), Abandon, Closed(Abandoned)),
    ];
    allowed.iter().find(|(f, e, _)| *f == from && *e == event).map(|(_, _, to)| *to)
}

pub const ALL_PHASES: [Phase; 6] = [
    Phase::Storytelling,
    Phase::Battle,
    Phase::Ending,
    Phase::Closed(Outcome::Victory),
    Phase::Closed(Outcome::Dawn),
    Phase::Closed(Outcome::Abandoned),
];

pub const ALL_EVENTS: [PhaseEvent; 7] = [
    PhaseEvent::FourthWeapon,
    PhaseEvent::AngerLimit,
    PhaseEvent::AllCardsPlayed,
    PhaseEvent::Seal(Outcome::Victory),
    PhaseEvent::Seal(Outcome::Dawn),
    PhaseEvent::Seal(Outcome::Abandoned),
    PhaseEvent::Abandon,
];

/// The raw table against the model, for every pair.
pub fn check_transition_table() -> Result<(), String> {
    for from in ALL_PHASES {
        for event in ALL_EVENTS {
            match (from.on(event), transition_model(from, event)) {
                (Ok(got), Some(want)) if got == want => {}
                (Err(Error::IllegalTransition { .. }), None) => {}
                (got, want) => return Err(format!("{from} on {event:?}: got {got:?}, model says {want:?}")),
            }
        }
    }
    Ok(())
}

fn scripted_item(rng: &mut impl Rng) -> String {
    const PROSE: &[&str] = &[
        "The hall fell silent. A sword hung above the throne.",
        "Guards brought a shield of hammered gold; the court gasped.",
        "A dagger glinted in the vizier's sleeve.",
        "Outside, riders lowered their lances.",
        "The lamps burned low and the night went on.",
        "Nothing of note happened in the garden.",
    ];
    match rng.random_range(0..12) {
        0..=5 => json!({
            "kind": "continue",
            "comment": "Go on.",
            "continuation": PROSE.choose(rng).unwrap(),
            "mood_delta": rng.random_range(-30..30),
            "name": format!("Relic {}", rng.random_range(0..1000)),
            "description": "Found in a tale.",
            "power": rng.random_range(-10..80),
        })
        .to_string(),
        6 => json!({"kind": "rephrase", "comment": "Again.", "mood_delta": rng.random_range(-30..5)}).to_string(),
        7..=8 => json!({"kind": "angry", "comment": "Enough!", "mood_delta": rng.random_range(-30..5)}).to_string(),
        9 => {
            let n = *[4usize, 4, 3, 5].choose(rng).unwrap();
            json!({"actions": vec!["strike"; n], "downfall": "down", "title": "T", "narration": "n"}).to_string()
        }
        10 => "```\nnot json at all\n```".to_owned(),
        _ => random_string(rng, 20),
    }
}

pub const MAX_OPS: usize = 60;

#[derive(Debug, Clone)]
pub enum Op {
    Submit(String),
    Play(usize),
    StartBattle,
    GenerateEnding,
    Abandon,
    Seal,
    Event(PhaseEvent),
}

/// Mostly the operation the phase expects, a quarter of the time anything.
fn random_op(rng: &mut impl Rng, phase: Phase) -> Op {
    let roll = if rng.random_bool(0.75) {
        match phase {
            Phase::Storytelling => rng.random_range(0..10),
            Phase::Battle => rng.random_range(10..14),
            _ => rng.random_range(15..18),
        }
    } else {
        rng.random_range(0..20)
    };
    match roll {
        0..=9 => Op::Submit(match rng.random_range(0..10) {
            0 => String::new(),
            1 => "   ".into(),
            2 => "x".repeat(2001),
            3 => "Ünïcödé tale 🙂 with a sword".into(),
            _ => format!("And then part {} of the tale unfolded.", rng.random_range(0..100)),
        }),
        10..=13 => Op::Play(rng.random_range(0..6)),
        14 => Op::StartBattle,
        15 => Op::GenerateEnding,
        16 => Op::Abandon,
        17 => Op::Seal,
        _ => Op::Event(*ALL_EVENTS.choose(rng).unwrap()),
    }
}

/// Runs one random operation sequence against the scripted backend, with
/// the engine's clone-and-commit discipline, checking invariants after
/// every step and the transition model on every direct event.
pub fn run_state_machine_sequence(rng: &mut impl Rng) -> Result<Vec<Phase>, String> {
    let script: Vec<String> = (0..rng.random_range(0..60)).map(|_| scripted_item(rng)).collect();
    let strict = rng.random_bool(0.5);
    let backend = ScriptedBackend::new(script, strict).with_seed(rng.random());
    let lexicon = WeaponLexicon::default();
    let clock = FixedClock(super::fixed_time());
    let ctx = TurnContext::new(&backend, &lexicon, &clock);

    let persona = nights_core::king::PersonaConfig {
        anger_limit: rng.random_range(1..=4),
        ..Default::default()
    };
    let mut committed = GameSession::new("sm".into(), rng.random(), persona, clock.0);
    let mut seen = vec![committed.phase];
    for _ in 0..rng.random_range(1..=MAX_OPS) {
        let op = random_op(rng, committed.phase);
        let mut draft = committed.clone();
        let before = committed.phase;
        let result: Result<(), Error> = match &op {
            Op::Submit(text) => session::submit_player_turn(&mut draft, text, &ctx).map(drop),
            Op::Play(i) => {
                let id = draft.weapons.get(*i).map_or("no-such-card".to_owned(), |c| c.id.clone());
                battle::play_card(&mut draft, &id).map(drop)
            }
            Op::StartBattle => battle::start_battle(&mut draft).map(drop),
            Op::GenerateEnding => chronicle::generate_ending(&mut draft, &ctx).map(drop),
            Op::Abandon => session::abandon(&mut draft, &clock).map(drop),
            Op::Seal => chronicle::assemble_storybook(&mut draft, &clock).map(drop),
            Op::Event(event) => {
                let modelled = transition_model(before, *event);
                let r = session::advance_phase(&mut draft, *event);
                match (&r, modelled) {
                    (Err(Error::IllegalTransition { .. }), None) => {}
                    (Err(Error::IllegalTransition { .. }), Some(_)) => {} // guard refused
                    (Ok(to), Some(want)) if *to == want => {}
                    (other, want) => {
                        return Err(format!("{before} on {event:?}: got {other:?}, model {want:?}"));
                    }
                }
                r.map(drop)
            }
        };
        match &op {
            Op::Submit(_) if before != Phase::Storytelling => {
                if !matches!(result, Err(Error::WrongPhase { .. })) {
                    return Err(format!("submit in {before}: {result:?}"));
                }
            }
            Op::Play(_)
                if (before != Phase::Battle || committed.battle.is_none())
                    && !matches!(result, Err(Error::WrongPhase { .. })) =>
            {
                return Err(format!("play in {before}: {result:?}"));
            }
            _ => {}
        }
        if result.is_ok() {
            if draft.revision < committed.revision {
                return Err("revision went backwards".into());
            }
            if committed.phase.is_closed() && draft.phase != committed.phase {
                return Err(format!("left closed phase {} for {}", committed.phase, draft.phase));
            }
            committed = draft;
        }
        committed
            .check_invariants()
            .map_err(|e| format!("after {op:?} ({result:?}): {e}"))?;
        if committed.weapons.len() == 4 && committed.phase == Phase::Storytelling {
            return Err("four weapons but still storytelling".into());
        }
        if !seen.contains(&committed.phase) {
            seen.push(committed.phase);
        }
    }
    Ok(seen)
}
