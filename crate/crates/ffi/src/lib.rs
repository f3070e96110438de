//! C bindings for the story engine.
//!
//! Every call returns a [`NightsStatus`]. Results come back as
//! NUL-terminated JSON (or Markdown) strings that the caller releases with
//! [`nights_string_free`]. After a failure, [`nights_last_error`] describes
//! it on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nights_core::king::PersonaConfig;
use nights_core::{ConfigError, Engine, Error, Settings};
use serde::Deserialize;

/// Outcome of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NightsStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or malformed request JSON.
    InvalidArgument = 1,
    Config = 2,
    WrongPhase = 3,
    Validation = 4,
    NotFound = 5,
    /// Another call is mutating the same session; safe to retry.
    Busy = 6,
    Contract = 7,
    Backend = 8,
    Storage = 9,
    Panic = 10,
}

/// Opaque engine handle.
pub struct NightsEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NightsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::WrongPhase { .. } | Error::IllegalTransition { .. } | Error::Capacity | Error::AlreadyPlayed(_) => {
                NightsStatus::WrongPhase
            }
            Error::EmptyText | Error::TextTooLong { .. } | Error::Validation(_) => NightsStatus::Validation,
            Error::UnknownCard(_) | Error::NotFound(_) => NightsStatus::NotFound,
            Error::Busy(_) => NightsStatus::Busy,
            Error::Contract(_) => NightsStatus::Contract,
            Error::Backend(_) => NightsStatus::Backend,
            Error::Storage(_) => NightsStatus::Storage,
        };
        Failure(status, e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure(NightsStatus::Config, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(NightsStatus::InvalidArgument, msg.into())
}

fn set_last_error(msg: Option<String>) {
    let msg = msg.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg);
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> NightsStatus {
    let result = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(Failure(NightsStatus::Panic, msg))
    });
    match result {
        Ok(()) => {
            set_last_error(None);
            NightsStatus::Ok
        }
        Err(Failure(status, msg)) => {
            set_last_error(Some(msg));
            status
        }
    }
}

/// # Safety
/// `s` is null or a valid NUL-terminated string.
unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(s) }.to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// # Safety
/// `engine` is null or came from [`nights_engine_new`].
unsafe fn engine<'a>(engine: *const NightsEngine) -> Result<&'a Engine, Failure> {
    unsafe { engine.as_ref() }.map(|h| &h.engine).ok_or_else(|| invalid("engine is null"))
}

fn hand_out(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("out is null"));
    }
    let s = CString::new(s).map_err(|_| invalid("result contains NUL"))?;
    unsafe { *out = s.into_raw() };
    Ok(())
}

fn hand_out_json(out: *mut *mut c_char, value: &impl serde::Serialize) -> Result<(), Failure> {
    let json = serde_json::to_string(value).map_err(|e| Failure(NightsStatus::Panic, e.to_string()))?;
    hand_out(out, json)
}

fn clear(out: *mut *mut c_char) {
    if !out.is_null() {
        unsafe { *out = ptr::null_mut() };
    }
}

/// Builds an engine from settings JSON (the same fields the server reads
/// from the environment). Null or `"{}"` gives the offline defaults.
///
/// # Safety
/// `config_json` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nights_engine_new(config_json: *const c_char, out: *mut *mut NightsEngine) -> NightsStatus {
    if !out.is_null() {
        unsafe { *out = ptr::null_mut() };
    }
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let settings: Settings = if config_json.is_null() {
            Settings::default()
        } else {
            serde_json::from_str(unsafe { text(config_json, "config_json") }?)
                .map_err(|e| Failure(NightsStatus::Config, format!("settings: {e}")))?
        };
        let engine = settings.build_engine()?;
        unsafe { *out = Box::into_raw(Box::new(NightsEngine { engine })) };
        Ok(())
    })
}

/// # Safety
/// `engine` is null or came from [`nights_engine_new`] and is not used again.
#[no_mangle]
pub unsafe extern "C" fn nights_engine_free(engine: *mut NightsEngine) {
    if !engine.is_null() {
        drop(unsafe { Box::from_raw(engine) });
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    seed: Option<u64>,
    persona: Option<PersonaConfig>,
}

/// Starts a session. `request_json` may be null or `{"seed":…,"persona":…}`.
/// Writes the session JSON to `out`.
///
/// # Safety
/// Pointers are null or valid; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nights_session_create(
    engine: *const NightsEngine,
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> NightsStatus {
    clear(out);
    guard(|| {
        let engine = unsafe { self::engine(engine) }?;
        let request: CreateRequest = if request_json.is_null() {
            CreateRequest::default()
        } else {
            serde_json::from_str(unsafe { text(request_json, "request_json") }?)
                .map_err(|e| invalid(format!("request: {e}")))?
        };
        let session = engine.create_session(request.seed, request.persona)?;
        hand_out_json(out, &session)
    })
}

/// Writes the session JSON to `out`.
///
/// # Safety
/// Pointers are null or valid; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nights_session_get(
    engine: *const NightsEngine,
    session_id: *const c_char,
    out: *mut *mut c_char,
) -> NightsStatus {
    clear(out);
    guard(|| {
        let engine = unsafe { self::engine(engine) }?;
        let session = engine.session(unsafe { text(session_id, "session_id") }?)?;
        hand_out_json(out, &session)
    })
}

/// Tells the next part of the story. Writes the turn outcome JSON to `out`.
///
/// # Safety
/// Pointers are null or valid; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nights_session_turn(
    engine: *const NightsEngine,
    session_id: *const c_char,
    player_text: *const c_char,
    out: *mut *mut c_char,
) -> NightsStatus {
    clear(out);
    guard(|| {
        let engine = unsafe { self::engine(engine) }?;
        let id = unsafe { text(session_id, "session_id") }?;
        let outcome = engine.submit_turn(id, unsafe { text(player_text, "player_text") }?)?;
        hand_out_json(out, &outcome)
    })
}

/// Plays one card in the battle. Writes the play JSON to `out`.
///
/// # Safety
/// Pointers are null or valid; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nights_session_play(
    engine: *const NightsEngine,
    session_id: *const c_char,
    card_id: *const c_char,
    out: *mut *mut c_char,
) -> NightsStatus {
    clear(out);
    guard(|| {
        let engine = unsafe { self::engine(engine) }?;
        let id = unsafe { text(session_id, "session_id") }?;
        let play = engine.play_card(id, unsafe { text(card_id, "card_id") }?)?;
        hand_out_json(out, &play)
    })
}

/// Seals the session (abandoning it if still in play) and writes the
/// storybook JSON to `out`. Repeated calls return the same storybook.
///
/// # Safety
/// Pointers are null or valid; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nights_session_close(
    engine: *const NightsEngine,
    session_id: *const c_char,
    out: *mut *mut c_char,
) -> NightsStatus {
    clear(out);
    guard(|| {
        let engine = unsafe { self::engine(engine) }?;
        let book = engine.close(unsafe { text(session_id, "session_id") }?)?;
        hand_out(out, book.to_canonical_json())
    })
}

/// Writes the Markdown storybook of a closed session to `out`.
///
/// # Safety
/// Pointers are null or valid; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nights_storybook_markdown(
    engine: *const NightsEngine,
    session_id: *const c_char,
    out: *mut *mut c_char,
) -> NightsStatus {
    clear(out);
    guard(|| {
        let engine = unsafe { self::engine(engine) }?;
        let md = engine.storybook_markdown(unsafe { text(session_id, "session_id") }?)?;
        hand_out(out, md)
    })
}

/// Message for the last failed call on this thread, or null. Owned by the
/// library and valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn nights_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string handed out by this library. Null is ignored.
///
/// # Safety
/// `s` is null or came from this library and is not used again.
#[no_mangle]
pub unsafe extern "C" fn nights_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn nights_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
