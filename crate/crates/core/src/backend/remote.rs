//! HTTP backends: OpenAI-compatible chat completions and a plain image endpoint.

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    placeholder_png, Backend, BackendError, GenerationKind, GenerationRequest, GenerationResult, ImageStore, Role,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, first try included.
    pub max_attempts: u32,
    pub base_backoff: Duration,
    /// Wall-clock bound for one logical call, retries and waits included.
    pub deadline: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
            deadline: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteConfig {
    pub chat_base_url: String,
    pub chat_model: String,
    pub chat_api_key: Option<String>,
    /// Without one, scenes fall back to placeholder pictures.
    pub image_base_url: Option<String>,
    pub retry: RetryPolicy,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    images: ImageStore,
    attempts: AtomicU64,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig, images: ImageStore) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.retry.deadline))
            .build()
            .into();
        RemoteBackend {
            config,
            agent,
            images,
            attempts: AtomicU64::new(0),
        }
    }

    /// HTTP attempts made so far, across all calls.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    fn chat_url(&self) -> String {
        let base = self.config.chat_base_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }

    fn with_retry<T>(&self, mut op: impl FnMut(Duration) -> Result<T, BackendError>) -> Result<T, BackendError> {
        let policy = self.config.retry;
        let start = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let remaining = policy.deadline.saturating_sub(start.elapsed());
            if remaining.is_zero() {
                return Err(BackendError::Timeout);
            }
            self.attempts.fetch_add(1, Ordering::Relaxed);
            tracing::info!(attempt, max = policy.max_attempts, "backend attempt");
            let err = match op(remaining) {
                Ok(v) => return Ok(v),
                Err(e) => e,
            };
            if !err.is_transient() || attempt >= policy.max_attempts {
                tracing::warn!(attempt, "backend call failed: {err}");
                return Err(err);
            }
            let backoff = policy.base_backoff * 2u32.pow(attempt - 1);
            if start.elapsed() + backoff >= policy.deadline {
                return Err(err);
            }
            tracing::info!(attempt, ?backoff, "transient backend failure, retrying: {err}");
            thread::sleep(backoff);
        }
    }

    fn post(&self, url: &str, body: &Value, timeout: Duration) -> Result<ureq::http::Response<ureq::Body>, BackendError> {
        let mut req = self
            .agent
            .post(url)
            .config()
            .timeout_global(Some(timeout))
            .build();
        if let Some(key) = &self.config.chat_api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req.send_json(body).map_err(map_transport)?;
        match resp.status().as_u16() {
            200..=299 => Ok(resp),
            429 => Err(BackendError::Quota),
            code => Err(BackendError::HttpStatus(code)),
        }
    }

    fn chat(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let mut messages = vec![json!({"role": "system", "content": request.system})];
        messages.extend(request.messages.iter().map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            json!({"role": role, "content": m.content})
        }));
        let mut body = json!({
            "model": self.config.chat_model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let url = self.chat_url();
        self.with_retry(|timeout| {
            let mut resp = self.post(&url, &body, timeout)?;
            let text = resp.body_mut().read_to_string().map_err(map_transport)?;
            let parsed: Value =
                serde_json::from_str(&text).map_err(|e| BackendError::BadResponse(format!("not JSON: {e}")))?;
            parsed["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_owned)
                .ok_or_else(|| BackendError::BadResponse("missing choices[0].message.content".into()))
        })
    }

    fn image(&self, request: &GenerationRequest) -> Result<Vec<u8>, BackendError> {
        let Some(url) = &self.config.image_base_url else {
            return Ok(placeholder_png(&request.prompt));
        };
        let body = json!({"prompt": request.prompt, "seed": request.seed.unwrap_or(0)});
        self.with_retry(|timeout| {
            let mut resp = self.post(url, &body, timeout)?;
            let bytes = resp.body_mut().read_to_vec().map_err(map_transport)?;
            if !bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
                return Err(BackendError::BadResponse("image endpoint did not return a PNG".into()));
            }
            Ok(bytes)
        })
    }
}

fn map_transport(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::StatusCode(429) => BackendError::Quota,
        ureq::Error::StatusCode(code) => BackendError::HttpStatus(code),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

impl Backend for RemoteBackend {
    fn backend_id(&self) -> &str {
        "remote"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate()?;
        let started = Instant::now();
        match request.kind {
            GenerationKind::Chat => {
                let text = self.chat(request)?;
                Ok(GenerationResult::text(text, started.elapsed(), "remote"))
            }
            GenerationKind::Image => {
                let png = self.image(request)?;
                let image = self.images.store(&request.prompt, request.seed.unwrap_or(0), &png)?;
                Ok(GenerationResult::image(image, started.elapsed(), "remote"))
            }
        }
    }
}
