//! Backend-agnostic text and image generation.
//!
//! Call sites build a [`GenerationRequest`] and hand it to whatever
//! [`Backend`] the configuration selected; nothing outside this module names
//! a concrete vendor.

mod image;
mod remote;
mod scripted;

use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ContractError, Error, Result};

pub use image::{placeholder_color, placeholder_png, ImageStore, PLACEHOLDER_SIZE};
pub use remote::{RemoteBackend, RemoteConfig, RetryPolicy};
pub use scripted::{load_script, ScriptError, ScriptedBackend};

pub const DEFAULT_STYLE_SUFFIX: &str = "ancient Middle-Eastern palace, oil painting, dramatic lighting";
pub const MAX_TEMPERATURE: f32 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationKind {
    Chat,
    Image,
}

/// What the caller wants the output for. Remote models ignore it; offline
/// backends use it to produce a reply of the right shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Verdict,
    Card,
    Ending,
    Scene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub kind: GenerationKind,
    pub task: Task,
    /// Chat only.
    pub system: String,
    /// Chat only.
    pub messages: Vec<ChatMessage>,
    /// Image only.
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f32,
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn chat(task: Task, system: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        GenerationRequest {
            kind: GenerationKind::Chat,
            task,
            system: system.into(),
            messages,
            prompt: String::new(),
            max_tokens: 1024,
            temperature: 0.8,
            seed: None,
        }
    }

    pub fn image(prompt: impl Into<String>, seed: u64) -> Self {
        GenerationRequest {
            kind: GenerationKind::Image,
            task: Task::Scene,
            system: String::new(),
            messages: Vec::new(),
            prompt: prompt.into(),
            max_tokens: 0,
            temperature: 0.0,
            seed: Some(seed),
        }
    }

    pub fn with_temperature(mut self, temperature: f32) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=MAX_TEMPERATURE).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, {MAX_TEMPERATURE}]",
                self.temperature
            )));
        }
        match self.kind {
            GenerationKind::Chat if self.messages.is_empty() => {
                Err(BackendError::InvalidRequest("chat request without messages".into()))
            }
            GenerationKind::Image if self.prompt.trim().is_empty() => {
                Err(BackendError::InvalidRequest("image request without prompt".into()))
            }
            _ => Ok(()),
        }
    }

    /// Last user message, if any.
    pub fn last_user_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

/// A stored picture: a backdrop or a card's artwork.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneImageRef {
    pub id: String,
    /// Relative to the data directory for stored files, or a URL.
    pub path_or_url: String,
    pub prompt_used: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationOutput {
    Text(String),
    Image(SceneImageRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub kind: GenerationKind,
    pub output: GenerationOutput,
    pub latency_ms: u64,
    pub backend_id: String,
}

impl GenerationResult {
    pub fn text(text: String, latency: Duration, backend_id: &str) -> Self {
        GenerationResult {
            kind: GenerationKind::Chat,
            output: GenerationOutput::Text(text),
            latency_ms: latency.as_millis() as u64,
            backend_id: backend_id.to_owned(),
        }
    }

    pub fn image(image: SceneImageRef, latency: Duration, backend_id: &str) -> Self {
        GenerationResult {
            kind: GenerationKind::Image,
            output: GenerationOutput::Image(image),
            latency_ms: latency.as_millis() as u64,
            backend_id: backend_id.to_owned(),
        }
    }

    pub fn into_text(self) -> Result<String, BackendError> {
        match self.output {
            GenerationOutput::Text(t) => Ok(t),
            GenerationOutput::Image(_) => Err(BackendError::BadResponse("expected text, got image".into())),
        }
    }

    pub fn into_image(self) -> Result<SceneImageRef, BackendError> {
        match self.output {
            GenerationOutput::Image(i) => Ok(i),
            GenerationOutput::Text(_) => Err(BackendError::BadResponse("expected image, got text".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend call timed out")]
    Timeout,
    #[error("backend answered HTTP {0}")]
    HttpStatus(u16),
    #[error("backend quota exhausted (HTTP 429)")]
    Quota,
    #[error("script exhausted after {0} steps")]
    ScriptExhausted(usize),
    #[error("unusable backend response: {0}")]
    BadResponse(String),
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("image storage failed: {0}")]
    Storage(String),
}

impl BackendError {
    /// Worth another attempt under the retry policy.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::Timeout | BackendError::Quota => true,
            BackendError::HttpStatus(code) => *code >= 500,
            _ => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate(request)
    }
}

pub fn repair_instruction(error: &ContractError) -> String {
    format!(
        "Your previous reply could not be used: {}. Reply again with one valid JSON object and nothing else.",
        error.reason()
    )
}

/// Runs a chat request whose reply must parse into `T`. A reply that fails
/// to parse earns exactly one retry, with the validation error appended to
/// the conversation.
pub fn generate_structured<T>(
    backend: &dyn Backend,
    request: GenerationRequest,
    parse: impl Fn(&str) -> Result<T, ContractError>,
) -> Result<T> {
    let first = backend.generate(&request)?.into_text()?;
    let error = match parse(&first) {
        Ok(value) => return Ok(value),
        Err(e) => e,
    };
    tracing::debug!(task = ?request.task, "repairing structured reply: {error}");
    let mut retry = request;
    retry.messages.push(ChatMessage::assistant(first));
    retry.messages.push(ChatMessage::user(repair_instruction(&error)));
    let second = backend.generate(&retry)?.into_text()?;
    parse(&second).map_err(Error::from)
}

/// Builds the scene prompt from a story excerpt and asks for a picture.
pub fn paint_scene(
    backend: &dyn Backend,
    story_excerpt: &str,
    style_suffix: &str,
    seed: u64,
) -> Result<SceneImageRef, BackendError> {
    let excerpt = story_excerpt.trim();
    if excerpt.is_empty() {
        return Err(BackendError::InvalidRequest("empty story excerpt".into()));
    }
    let prompt = format!("{excerpt}, {style_suffix}");
    backend.generate(&GenerationRequest::image(prompt, seed))?.into_image()
}
