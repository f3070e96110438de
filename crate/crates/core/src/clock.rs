//! Time and identity sources.
//!
//! Everything that would otherwise read the wall clock or an OS random
//! source goes through these, so a playthrough can be replayed byte for byte.

use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};
use uuid::Uuid;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that never moves. Used for golden files.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

/// Where session ids come from.
#[derive(Debug)]
pub enum IdSource {
    /// Fresh v4 UUIDs from the OS.
    Random,
    /// UUID-shaped ids derived from the session seed and a per-engine
    /// counter; two engines fed the same calls hand out the same ids.
    Seeded(AtomicU64),
}

impl IdSource {
    pub fn seeded() -> Self {
        IdSource::Seeded(AtomicU64::new(0))
    }

    pub fn session_id(&self, seed: u64) -> String {
        match self {
            IdSource::Random => Uuid::new_v4().to_string(),
            IdSource::Seeded(counter) => {
                let n = counter.fetch_add(1, Ordering::Relaxed);
                derived_uuid(&format!("session|{seed}|{n}"))
            }
        }
    }
}

/// A v4-shaped UUID whose bits come from SHA-256 of `material`.
pub fn derived_uuid(material: &str) -> String {
    let digest = Sha256::digest(material.as_bytes());
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&digest[..16]);
    uuid::Builder::from_random_bytes(bytes)
        .into_uuid()
        .to_string()
}

/// First eight bytes of SHA-256, big-endian. Stable across platforms and runs.
pub fn stable_hash64(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}
