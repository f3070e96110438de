use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{load_script, Backend, ImageStore, RemoteBackend, RemoteConfig, RetryPolicy, ScriptedBackend};
use crate::backend::ScriptError;
use crate::clock::{Clock, FixedClock, SystemClock};
use crate::engine::{Engine, EngineOptions};
use crate::forge::WeaponLexicon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Scripted,
    /// Improvised offline replies and solid-colour pictures.
    #[default]
    Placeholder,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Remote => "remote",
            BackendKind::Scripted => "scripted",
            BackendKind::Placeholder => "placeholder",
        }
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "remote" => Ok(BackendKind::Remote),
            "scripted" => Ok(BackendKind::Scripted),
            "placeholder" => Ok(BackendKind::Placeholder),
            other => Err(format!("unknown backend kind `{other}` (expected remote, scripted or placeholder)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Everything needed to stand up an engine. Readable from the environment
/// or from JSON (the C bindings take it that way).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub backend_kind: BackendKind,
    pub chat_base_url: Option<String>,
    pub chat_model: Option<String>,
    pub chat_api_key: Option<String>,
    pub image_base_url: Option<String>,
    pub data_dir: PathBuf,
    /// Default seed for new sessions and for improvised replies.
    pub seed: Option<u64>,
    pub script_path: Option<PathBuf>,
    /// Fail instead of improvising once the script runs out.
    pub script_strict: bool,
    pub lexicon_path: Option<PathBuf>,
    pub anger_limit: Option<u32>,
    pub port: u16,
    /// Freezes time and derives ids from seeds, for reproducible files.
    pub fixed_clock: Option<DateTime<Utc>>,
    /// Empty means any origin.
    pub cors_allow_origins: Vec<String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            backend_kind: BackendKind::default(),
            chat_base_url: None,
            chat_model: None,
            chat_api_key: None,
            image_base_url: None,
            data_dir: PathBuf::from("data"),
            seed: None,
            script_path: None,
            script_strict: false,
            lexicon_path: None,
            anger_limit: None,
            port: 8080,
            fixed_clock: None,
            cors_allow_origins: Vec::new(),
        }
    }
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}

fn env_parse<T: FromStr>(name: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    env_var(name)
        .map(|v| v.trim().parse::<T>().map_err(|e| ConfigError::Invalid(format!("{name}: {e}"))))
        .transpose()
}

impl Settings {
    pub fn from_env() -> Result<Self, ConfigError> {
        let mut s = Settings::default();
        if let Some(kind) = env_parse::<BackendKind>("BACKEND_KIND")? {
            s.backend_kind = kind;
        }
        s.chat_base_url = env_var("CHAT_BASE_URL");
        s.chat_model = env_var("CHAT_MODEL");
        s.chat_api_key = env_var("CHAT_API_KEY");
        s.image_base_url = env_var("IMAGE_BASE_URL");
        if let Some(dir) = env_var("DATA_DIR") {
            s.data_dir = dir.into();
        }
        s.seed = env_parse("SEED")?;
        s.script_path = env_var("SCRIPT_PATH").map(PathBuf::from);
        s.script_strict = env_parse("SCRIPT_STRICT")?.unwrap_or(false);
        s.lexicon_path = env_var("LEXICON_PATH").map(PathBuf::from);
        s.anger_limit = env_parse("ANGER_LIMIT")?;
        if let Some(port) = env_parse("PORT")? {
            s.port = port;
        }
        s.fixed_clock = env_parse("FIXED_CLOCK")?;
        s.cors_allow_origins = env_var("CORS_ALLOW_ORIGINS")
            .map(|v| v.split(',').map(|o| o.trim().to_owned()).filter(|o| !o.is_empty()).collect())
            .unwrap_or_default();
        Ok(s)
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        match self.fixed_clock {
            Some(t) => Arc::new(FixedClock(t)),
            None => Arc::new(SystemClock),
        }
    }

    pub fn lexicon(&self) -> Result<WeaponLexicon, ConfigError> {
        match &self.lexicon_path {
            Some(path) => WeaponLexicon::load(path).map_err(ConfigError::Lexicon),
            None => Ok(WeaponLexicon::default()),
        }
    }

    pub fn backend(&self, clock: Arc<dyn Clock>, lexicon: &WeaponLexicon) -> Result<Arc<dyn Backend>, ConfigError> {
        let images = ImageStore::new(self.data_dir.clone(), clock);
        let seed = self.seed.unwrap_or(0);
        Ok(match self.backend_kind {
            BackendKind::Placeholder => Arc::new(
                ScriptedBackend::formulaic(seed)
                    .with_lexicon(lexicon)
                    .with_images(images),
            ),
            BackendKind::Scripted => {
                let path = self
                    .script_path
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("SCRIPT_PATH is required for the scripted backend".into()))?;
                let script = load_script(path)?;
                Arc::new(
                    ScriptedBackend::new(script, self.script_strict)
                        .with_seed(seed)
                        .with_lexicon(lexicon)
                        .with_images(images),
                )
            }
            BackendKind::Remote => {
                let need = |v: &Option<String>, name: &str| {
                    v.clone()
                        .ok_or_else(|| ConfigError::Invalid(format!("{name} is required for the remote backend")))
                };
                Arc::new(RemoteBackend::new(
                    RemoteConfig {
                        chat_base_url: need(&self.chat_base_url, "CHAT_BASE_URL")?,
                        chat_model: need(&self.chat_model, "CHAT_MODEL")?,
                        chat_api_key: self.chat_api_key.clone(),
                        image_base_url: self.image_base_url.clone(),
                        retry: RetryPolicy::default(),
                    },
                    images,
                ))
            }
        })
    }

    pub fn build_engine(&self) -> Result<Engine, ConfigError> {
        let clock = self.clock();
        let lexicon = self.lexicon()?;
        let backend = self.backend(clock.clone(), &lexicon)?;
        let mut options = EngineOptions::new(self.data_dir.clone());
        if self.fixed_clock.is_some() {
            options = options.deterministic(clock);
        } else {
            options.clock = clock;
        }
        options.lexicon = lexicon;
        if let Some(limit) = self.anger_limit {
            if limit < 1 {
                return Err(ConfigError::Invalid("ANGER_LIMIT must be at least 1".into()));
            }
            options.persona.anger_limit = limit;
        }
        Ok(Engine::new(backend, options))
    }
}
