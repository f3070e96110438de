//! Session registry with per-session serialization and all-or-nothing commits.
//!
//! Each operation runs against a private copy of the session. Only when it
//! succeeds is the copy persisted and swapped in; any error leaves both the
//! in-memory and the on-disk session exactly as they were. A session with
//! an operation in flight rejects further mutations with [`Error::Busy`]
//! instead of queueing them, while reads keep seeing the last commit.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::backend::{Backend, DEFAULT_STYLE_SUFFIX};
use crate::battle::{self, BattlePlay, BattleState};
use crate::chronicle::{self, EndingChronicle, Storybook};
use crate::clock::{Clock, IdSource, SystemClock};
use crate::error::{Error, Result};
use crate::forge::WeaponLexicon;
use crate::king::{PersonaConfig, DEFAULT_TRANSCRIPT_BUDGET};
use crate::session::{self, GameSession, Phase, TurnContext, TurnOutcome};
use crate::store::SessionStore;

pub struct EngineOptions {
    pub data_dir: PathBuf,
    pub lexicon: WeaponLexicon,
    /// Persona for sessions created without overrides.
    pub persona: PersonaConfig,
    pub style_suffix: String,
    pub transcript_budget: usize,
    pub clock: Arc<dyn Clock>,
    pub ids: IdSource,
}

impl EngineOptions {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        EngineOptions {
            data_dir: data_dir.into(),
            lexicon: WeaponLexicon::default(),
            persona: PersonaConfig::default(),
            style_suffix: DEFAULT_STYLE_SUFFIX.to_owned(),
            transcript_budget: DEFAULT_TRANSCRIPT_BUDGET,
            clock: Arc::new(SystemClock),
            ids: IdSource::Random,
        }
    }

    /// Frozen clock and seed-derived ids: replays produce identical files.
    pub fn deterministic(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self.ids = IdSource::seeded();
        self
    }
}

struct Slot {
    committed: RwLock<GameSession>,
    busy: AtomicBool,
}

struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

pub struct Engine {
    options: EngineOptions,
    backend: Arc<dyn Backend>,
    store: SessionStore,
    slots: Mutex<HashMap<String, Arc<Slot>>>,
}

impl Engine {
    pub fn new(backend: Arc<dyn Backend>, options: EngineOptions) -> Self {
        let store = SessionStore::new(options.data_dir.clone());
        Engine {
            options,
            backend,
            store,
            slots: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn backend(&self) -> &dyn Backend {
        &*self.backend
    }

    pub fn options(&self) -> &EngineOptions {
        &self.options
    }

    fn ctx(&self) -> TurnContext<'_> {
        TurnContext {
            backend: &*self.backend,
            lexicon: &self.options.lexicon,
            clock: &*self.options.clock,
            transcript_budget: self.options.transcript_budget,
            style_suffix: &self.options.style_suffix,
        }
    }

    pub fn create_session(&self, seed: Option<u64>, persona: Option<PersonaConfig>) -> Result<GameSession> {
        let persona = persona.unwrap_or_else(|| self.options.persona.clone());
        persona.validate().map_err(Error::Validation)?;
        let seed = seed.unwrap_or_else(rand::random);
        let id = self.options.ids.session_id(seed);
        let session = GameSession::new(id.clone(), seed, persona, self.options.clock.now());
        self.store.save(&session)?;
        let slot = Arc::new(Slot {
            committed: RwLock::new(session.clone()),
            busy: AtomicBool::new(false),
        });
        self.slots.lock().insert(id, slot);
        Ok(session)
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>> {
        if let Some(slot) = self.slots.lock().get(id) {
            return Ok(slot.clone());
        }
        let session = self.store.load(id)?.ok_or_else(|| Error::NotFound(id.to_owned()))?;
        let mut slots = self.slots.lock();
        let slot = slots.entry(id.to_owned()).or_insert_with(|| {
            Arc::new(Slot {
                committed: RwLock::new(session),
                busy: AtomicBool::new(false),
            })
        });
        Ok(slot.clone())
    }

    /// Last committed state.
    pub fn session(&self, id: &str) -> Result<GameSession> {
        Ok(self.slot(id)?.committed.read().clone())
    }

    fn mutate<T>(&self, id: &str, op: impl FnOnce(&mut GameSession) -> Result<T>) -> Result<T> {
        let slot = self.slot(id)?;
        if slot
            .busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Err(Error::Busy(id.to_owned()));
        }
        let _guard = BusyGuard(&slot.busy);
        let mut draft = slot.committed.read().clone();
        let revision = draft.revision;
        let value = op(&mut draft)?;
        if draft.revision != revision {
            debug_assert_eq!(draft.check_invariants(), Ok(()));
            self.store.save(&draft)?;
            *slot.committed.write() = draft;
        }
        Ok(value)
    }

    pub fn submit_turn(&self, id: &str, text: &str) -> Result<TurnOutcome> {
        let ctx = self.ctx();
        self.mutate(id, |s| session::submit_player_turn(s, text, &ctx))
    }

    /// Normally unnecessary: the turn that forges the fourth card starts the battle.
    pub fn start_battle(&self, id: &str) -> Result<BattleState> {
        let clock = &*self.options.clock;
        self.mutate(id, |s| {
            let state = battle::start_battle(s)?.clone();
            s.touch(clock);
            Ok(state)
        })
    }

    /// Plays a card; the fourth play also writes the ending.
    pub fn play_card(&self, id: &str, card_id: &str) -> Result<BattlePlay> {
        let ctx = self.ctx();
        self.mutate(id, |s| {
            let play = battle::play_card(s, card_id)?;
            s.touch(ctx.clock);
            if s.phase == Phase::Ending {
                chronicle::generate_ending(s, &ctx)?;
            }
            Ok(play)
        })
    }

    pub fn generate_ending(&self, id: &str) -> Result<EndingChronicle> {
        let ctx = self.ctx();
        self.mutate(id, |s| chronicle::generate_ending(s, &ctx))
    }

    pub fn abandon(&self, id: &str) -> Result<Phase> {
        let clock = &*self.options.clock;
        self.mutate(id, |s| session::abandon(s, clock))
    }

    /// Seals the session and writes its storybook. A session still in play
    /// is abandoned first. Once written, the storybook never changes: later
    /// calls return the stored one.
    pub fn close(&self, id: &str) -> Result<Storybook> {
        let ctx = self.ctx();
        self.mutate(id, |s| {
            if let Some(book) = self.store.load_storybook(id)? {
                return Ok(book);
            }
            if matches!(s.phase, Phase::Storytelling | Phase::Battle) {
                session::abandon(s, ctx.clock)?;
            }
            if s.phase == Phase::Ending && s.ending.is_none() {
                chronicle::generate_ending(s, &ctx)?;
            }
            let book = chronicle::assemble_storybook(s, ctx.clock)?;
            self.store.write_storybook(&book)?;
            Ok(book)
        })
    }

    pub fn storybook(&self, id: &str) -> Result<Storybook> {
        self.store.load_storybook(id)?.ok_or_else(|| Error::NotFound(id.to_owned()))
    }

    pub fn storybook_markdown(&self, id: &str) -> Result<String> {
        self.store
            .read_storybook_markdown(id)?
            .ok_or_else(|| Error::NotFound(id.to_owned()))
    }
}
