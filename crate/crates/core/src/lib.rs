//! Engine for a co-creative storytelling game: the player tells a tale to a
//! capricious King, who judges every turn, forges weapon cards out of the
//! story and finally duels the storyteller with them.

pub mod backend;
pub mod battle;
pub mod chronicle;
pub mod clock;
pub mod config;
pub mod engine;
pub mod error;
pub mod extract;
pub mod forge;
pub mod king;
pub mod server;
pub mod session;
pub mod store;

pub use config::{BackendKind, ConfigError, Settings};
pub use engine::{Engine, EngineOptions};
pub use error::{ContractError, Error, Result, StorageError};
pub use session::{GameSession, Outcome, Phase, PhaseEvent};
