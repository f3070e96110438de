#![allow(dead_code)]

pub mod oracles;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use nights_core::backend::{
    Backend, BackendError, GenerationKind, GenerationRequest, GenerationResult, ImageStore, RemoteBackend,
    RemoteConfig, RetryPolicy, ScriptedBackend, SceneImageRef, Task,
};
use nights_core::clock::FixedClock;
use nights_core::forge::WeaponLexicon;
use nights_core::{Engine, EngineOptions};

pub const FIXED_CLOCK: &str = "2025-01-01T00:00:00Z";
pub const GOLDEN_SEED: u64 = 42;

pub fn fixed_time() -> DateTime<Utc> {
    FIXED_CLOCK.parse().unwrap()
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden_script() -> Vec<String> {
    serde_json::from_str(&std::fs::read_to_string(fixture("golden_script.json")).unwrap()).unwrap()
}

/// Player lines from the golden inputs file, comments and blanks dropped.
pub fn golden_inputs() -> Vec<String> {
    std::fs::read_to_string(fixture("golden_inputs.txt"))
        .unwrap()
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

pub fn deterministic_options(data_dir: &Path) -> EngineOptions {
    EngineOptions::new(data_dir).deterministic(Arc::new(FixedClock(fixed_time())))
}

pub fn scripted(data_dir: &Path, script: Vec<String>, strict: bool, seed: u64) -> Arc<ScriptedBackend> {
    Arc::new(
        ScriptedBackend::new(script, strict)
            .with_seed(seed)
            .with_lexicon(&WeaponLexicon::default())
            .with_images(ImageStore::new(data_dir, Arc::new(FixedClock(fixed_time())))),
    )
}

pub fn engine_with(data_dir: &Path, backend: Arc<dyn Backend>) -> Engine {
    Engine::new(backend, deterministic_options(data_dir))
}

/// Improvises everything; never runs dry.
pub fn formulaic_engine(data_dir: &Path, seed: u64) -> Engine {
    engine_with(data_dir, scripted(data_dir, Vec::new(), false, seed))
}

/// A reply that satisfies the verdict, card and ending contracts at once.
pub fn universal_reply(continuation: &str) -> String {
    json!({
        "kind": "continue",
        "comment": "Go on.",
        "continuation": continuation,
        "mood_delta": 3,
        "name": "Stub Blade",
        "description": "A blade made of test doubles.",
        "power": 30,
        "effect_description": "It cuts.",
        "player_line": "Take this!",
        "king_line": "Never!",
        "actions": ["one", "two", "three", "four"],
        "downfall": "The King fell.",
        "title": "A Stubbed Night",
        "narration": "And so it ended.",
    })
    .to_string()
}

/// Seeded backend that answers with every verdict kind, malformed JSON and
/// transient failures, to stress commit and rollback.
pub struct ChaosBackend {
    rng: Mutex<ChaCha8Rng>,
    images: ImageStore,
    /// Percent of chat calls that fail outright.
    pub failure_rate: u32,
}

impl ChaosBackend {
    pub fn new(seed: u64, data_dir: &Path, failure_rate: u32) -> Self {
        ChaosBackend {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            images: ImageStore::new(data_dir, Arc::new(FixedClock(fixed_time()))),
            failure_rate,
        }
    }

    fn chat(&self, task: Task) -> Result<String, BackendError> {
        let mut rng = self.rng.lock();
        if rng.random_range(0..100) < self.failure_rate {
            return Err(match rng.random_range(0..3) {
                0 => BackendError::Quota,
                1 => BackendError::HttpStatus(500),
                _ => BackendError::Timeout,
            });
        }
        if rng.random_range(0..10) == 0 {
            return Ok("the King mutters something unparseable {".to_owned());
        }
        const WEAPONS: [&str; 7] = ["sword", "shield", "dagger", "spear", "bow", "axe", "hammer"];
        Ok(match task {
            Task::Verdict | Task::Scene => match rng.random_range(0..10) {
                0..=5 => {
                    let weapon = WEAPONS[rng.random_range(0..WEAPONS.len())];
                    let text = if rng.random_bool(0.6) {
                        format!("The hall grew quiet. A {weapon} lay on the table.")
                    } else {
                        "The hall grew quiet and the lamps burned low.".to_owned()
                    };
                    json!({"kind": "continue", "comment": "Go on.", "continuation": text, "mood_delta": rng.random_range(-20..=10)})
                        .to_string()
                }
                6..=7 => json!({"kind": "rephrase", "comment": "Again.", "mood_delta": rng.random_range(-20..=0)}).to_string(),
                _ => json!({"kind": "angry", "comment": "Enough!", "mood_delta": rng.random_range(-20..=-1)}).to_string(),
            },
            Task::Card => json!({"name": "Chaos Arm", "description": "Forged in chaos.", "power": rng.random_range(0..60)})
                .to_string(),
            Task::Ending => {
                let n = if rng.random_bool(0.7) { 4 } else { rng.random_range(0..7) };
                json!({"actions": vec!["strike"; n], "downfall": "down", "title": "Chaos", "narration": "done"}).to_string()
            }
        })
    }
}

impl Backend for ChaosBackend {
    fn backend_id(&self) -> &str {
        "chaos"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        match request.kind {
            GenerationKind::Chat => Ok(GenerationResult::text(self.chat(request.task)?, Duration::ZERO, "chaos")),
            GenerationKind::Image => {
                if self.rng.lock().random_range(0..100) < self.failure_rate {
                    return Err(BackendError::HttpStatus(503));
                }
                let seed = request.seed.unwrap_or(0);
                let png = nights_core::backend::placeholder_png(&request.prompt);
                let image: SceneImageRef = self.images.store(&request.prompt, seed, &png)?;
                Ok(GenerationResult::image(image, Duration::ZERO, "chaos"))
            }
        }
    }
}

/// Wraps a backend and sleeps before every call.
pub struct SlowBackend<B> {
    pub inner: B,
    pub delay: Duration,
}

impl<B: Backend> Backend for SlowBackend<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        thread::sleep(self.delay);
        self.inner.generate(request)
    }
}

/// Records every request it forwards.
pub struct RecordingBackend<B> {
    pub inner: B,
    pub requests: Mutex<Vec<GenerationRequest>>,
}

impl<B> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            requests: Mutex::new(Vec::new()),
        }
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        self.requests.lock().push(request.clone());
        self.inner.generate(request)
    }
}

pub struct StubRequest {
    pub path: String,
    pub body: String,
}

pub struct StubResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl StubResponse {
    pub fn json(status: u16, body: impl Into<String>) -> Self {
        StubResponse {
            status,
            content_type: "application/json",
            body: body.into().into_bytes(),
        }
    }

    /// A chat completion whose message content is `content`.
    pub fn completion(content: &str) -> Self {
        Self::json(200, json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string())
    }

    pub fn png(bytes: Vec<u8>) -> Self {
        StubResponse {
            status: 200,
            content_type: "image/png",
            body: bytes,
        }
    }
}

type Responder = dyn Fn(usize, &StubRequest) -> StubResponse + Send + Sync;

/// Minimal HTTP/1.1 server: one request per connection, answered by `responder`.
pub struct StubServer {
    pub addr: SocketAddr,
    hits: Arc<AtomicUsize>,
    log: Arc<Mutex<Vec<String>>>,
}

impl StubServer {
    pub fn start(responder: impl Fn(usize, &StubRequest) -> StubResponse + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let log = Arc::new(Mutex::new(Vec::new()));
        let responder: Arc<Responder> = Arc::new(responder);
        {
            let hits = hits.clone();
            let log = log.clone();
            thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    let n = hits.fetch_add(1, Ordering::SeqCst);
                    if let Some(request) = read_request(&stream) {
                        log.lock().push(request.path.clone());
                        let response = responder(n, &request);
                        write_response(stream, &response);
                    }
                }
            });
        }
        StubServer { addr, hits, log }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn paths(&self) -> Vec<String> {
        self.log.lock().clone()
    }
}

fn read_request(stream: &TcpStream) -> Option<StubRequest> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_owned();
    let mut length = 0usize;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).ok()?;
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).ok()?;
    Some(StubRequest {
        path,
        body: String::from_utf8_lossy(&body).into_owned(),
    })
}

fn write_response(mut stream: TcpStream, response: &StubResponse) {
    let head = format!(
        "HTTP/1.1 {} Stub\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        response.status,
        response.content_type,
        response.body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(&response.body);
    let _ = stream.flush();
}

/// The HTTP API on an ephemeral port, running on its own runtime thread.
pub struct ApiServer {
    pub addr: SocketAddr,
    _shutdown: tokio::sync::oneshot::Sender<()>,
}

impl ApiServer {
    pub fn start(engine: Engine, backend_label: &str) -> Self {
        let state = nights_core::server::AppState::new(Arc::new(engine), backend_label);
        let app = nights_core::server::router(state, &[]);
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
        thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = shutdown_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        ApiServer {
            addr: addr_rx.recv().unwrap(),
            _shutdown: shutdown_tx,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

/// Blocking client that hands back every status instead of erroring.
pub fn http_agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into()
}

/// Plays `inputs` the way the CLI does: story lines while storytelling,
/// 1-based card numbers once the battle is on. Returns the sealed storybook.
pub fn play_through(engine: &Engine, seed: u64, inputs: &[String]) -> nights_core::chronicle::Storybook {
    use nights_core::Phase;
    let id = engine.create_session(Some(seed), None).unwrap().id;
    for line in inputs {
        let session = engine.session(&id).unwrap();
        match session.phase {
            Phase::Storytelling => {
                engine.submit_turn(&id, line).unwrap();
            }
            Phase::Battle => {
                let n: usize = line.parse().unwrap();
                engine.play_card(&id, &session.weapons[n - 1].id).unwrap();
            }
            _ => break,
        }
    }
    engine.close(&id).unwrap()
}

/// Proptest settings without regression files: cases are seeds, and every
/// failure message carries the seed.
pub fn prop_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        failure_persistence: None,
        ..proptest::test_runner::Config::with_cases(cases)
    }
}

/// Remote backend pointed at a stub, with millisecond backoff.
pub fn remote_engine(dir: &Path, stub: &StubServer) -> (Engine, Arc<RemoteBackend>) {
    let backend = Arc::new(RemoteBackend::new(
        RemoteConfig {
            chat_base_url: stub.url(),
            chat_model: "stub-model".into(),
            chat_api_key: Some("test-key".into()),
            image_base_url: Some(format!("{}/image", stub.url())),
            retry: RetryPolicy {
                max_attempts: 3,
                base_backoff: Duration::from_millis(1),
                deadline: Duration::from_secs(20),
            },
        },
        ImageStore::new(dir, Arc::new(FixedClock(fixed_time()))),
    ));
    (engine_with(dir, backend.clone()), backend)
}

/// Session state as bytes: the file on disk and the committed value.
pub fn snapshot(engine: &Engine, id: &str) -> (Vec<u8>, String) {
    let file = std::fs::read(engine.store().session_path(id)).unwrap();
    let memory = serde_json::to_string(&engine.session(id).unwrap()).unwrap();
    (file, memory)
}

/// Longest run of identical consecutive request bodies: a retried call
/// resends the same body, a new call never does.
pub fn longest_identical_run(bodies: &[String]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for (i, body) in bodies.iter().enumerate() {
        run = if i > 0 && bodies[i - 1] == *body { run + 1 } else { 1 };
        best = best.max(run);
    }
    best
}

