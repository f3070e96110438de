//! Deterministic backend that replays canned replies.

use std::path::Path;
use std::time::Duration;

use parking_lot::Mutex;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{placeholder_png, Backend, BackendError, GenerationKind, GenerationRequest, GenerationResult, ImageStore, SceneImageRef, Task};
use crate::clock::stable_hash64;
use crate::forge::WeaponLexicon;

/// Chat requests consume script items in order. Image requests never do;
/// they always get a placeholder picture.
///
/// A non-strict backend that runs out of script improvises formulaic but
/// well-formed replies seeded from `seed`, so long offline sessions keep
/// going. A strict one fails with [`BackendError::ScriptExhausted`].
pub struct ScriptedBackend {
    script: Vec<String>,
    strict: bool,
    seed: u64,
    keywords: Vec<String>,
    images: Option<ImageStore>,
    state: Mutex<Cursor>,
}

#[derive(Default)]
struct Cursor {
    next: usize,
    improvised: u64,
}

impl ScriptedBackend {
    pub fn new(script: Vec<String>, strict: bool) -> Self {
        ScriptedBackend {
            script,
            strict,
            seed: 0,
            keywords: WeaponLexicon::default()
                .categories
                .iter()
                .map(|c| c.canonical.clone())
                .collect(),
            images: None,
            state: Mutex::new(Cursor::default()),
        }
    }

    /// No script at all: every reply is improvised.
    pub fn formulaic(seed: u64) -> Self {
        Self::new(Vec::new(), false).with_seed(seed)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_images(mut self, images: ImageStore) -> Self {
        self.images = Some(images);
        self
    }

    pub fn with_lexicon(mut self, lexicon: &WeaponLexicon) -> Self {
        self.keywords = lexicon.categories.iter().map(|c| c.canonical.clone()).collect();
        self
    }

    /// Script items handed out so far.
    pub fn consumed(&self) -> usize {
        self.state.lock().next
    }

    fn next_text(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let mut state = self.state.lock();
        if let Some(item) = self.script.get(state.next) {
            state.next += 1;
            return Ok(item.clone());
        }
        if self.strict {
            return Err(BackendError::ScriptExhausted(self.script.len()));
        }
        let n = state.improvised;
        state.improvised += 1;
        drop(state);
        Ok(self.improvise(request, n))
    }

    fn improvise(&self, request: &GenerationRequest, n: u64) -> String {
        let context = request.last_user_text().unwrap_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stable_hash64(context) ^ n.rotate_left(32));
        match request.task {
            Task::Verdict | Task::Scene => {
                let echo = last_sentence(context);
                let keyword = if self.keywords.is_empty() {
                    "sword"
                } else {
                    &self.keywords[n as usize % self.keywords.len()]
                };
                let flourish = [
                    format!("Then the {keyword} gleamed in the torchlight."),
                    format!("A servant brought forth the {keyword} from the treasury."),
                    format!("Somewhere in the palace, the {keyword} lay waiting."),
                ];
                let comment = ["Go on.", "Hmm. Continue.", "You may proceed, storyteller."];
                json!({
                    "kind": "continue",
                    "comment": comment.choose(&mut rng).expect("non-empty"),
                    "continuation": format!(
                        "The King pondered… \"{echo}\" he repeated. {}",
                        flourish.choose(&mut rng).expect("non-empty")
                    ),
                    "mood_delta": rng.random_range(0..=5),
                })
                .to_string()
            }
            Task::Card => {
                let category = context
                    .lines()
                    .find_map(|l| l.strip_prefix("Category: "))
                    .unwrap_or("relic")
                    .trim();
                let adjective = ["Moonlit", "Gilded", "Whispering", "Ember", "Silent"]
                    .choose(&mut rng)
                    .expect("non-empty");
                let name = format!("{adjective} {}", capitalize(category));
                json!({
                    "name": name,
                    "description": format!("A {category} forged from the night's tale."),
                    "power": rng.random_range(10..=40),
                    "effect_description": format!("The {name} flashes across the hall."),
                    "player_line": format!("Behold the {name}, my king!"),
                    "king_line": "Impossible! Guards!",
                })
                .to_string()
            }
            Task::Ending => json!({
                "actions": [
                    "The storyteller struck first, swift as a desert wind.",
                    "She struck again, and the hall fell silent.",
                    "A third blow rang out like a temple bell.",
                    "The last strike ended the long night.",
                ],
                "downfall": "The King's pride crumbled like a sandcastle at high tide.",
                "title": "Teller of the Thousand Nights",
                "narration": "So ends the tale, sung by bards in every caravanserai.",
            })
            .to_string(),
        }
    }
}

impl Backend for ScriptedBackend {
    fn backend_id(&self) -> &str {
        "scripted"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate()?;
        match request.kind {
            GenerationKind::Chat => Ok(GenerationResult::text(self.next_text(request)?, Duration::ZERO, "scripted")),
            GenerationKind::Image => {
                let seed = request.seed.unwrap_or(self.seed);
                let image = match &self.images {
                    Some(store) => store.store(&request.prompt, seed, &placeholder_png(&request.prompt))?,
                    None => SceneImageRef {
                        id: ImageStore::image_id(&request.prompt, seed),
                        path_or_url: format!("placeholder:{}", ImageStore::image_id(&request.prompt, seed)),
                        prompt_used: request.prompt.clone(),
                        created_at: chrono::DateTime::UNIX_EPOCH,
                    },
                };
                Ok(GenerationResult::image(image, Duration::ZERO, "scripted"))
            }
        }
    }
}

fn last_sentence(text: &str) -> String {
    let trimmed = text.trim().trim_end_matches(['.', '!', '?', ';']);
    let start = trimmed.rfind(['.', '!', '?', ';', '\n']).map(|i| i + 1).unwrap_or(0);
    let s = trimmed[start..].trim();
    if s.is_empty() {
        "Go on".to_owned()
    } else {
        s.chars().take(200).collect()
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("script not found: {0}")]
    NotFound(String),
    #[error("cannot read script {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("script {path} is not a JSON array of strings: {source}")]
    Malformed { path: String, source: serde_json::Error },
}

/// Reads a script file: a JSON array of strings.
pub fn load_script(path: &Path) -> Result<Vec<String>, ScriptError> {
    let shown = path.display().to_string();
    let raw = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ScriptError::NotFound(shown.clone())
        } else {
            ScriptError::Io { path: shown.clone(), source }
        }
    })?;
    serde_json::from_str(&raw).map_err(|source| ScriptError::Malformed { path: shown, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ChatMessage;
    use crate::king::parse_verdict;

    fn chat(task: Task, text: &str) -> GenerationRequest {
        GenerationRequest::chat(task, "sys", vec![ChatMessage::user(text)])
    }

    #[test]
    fn replays_in_order_then_exhausts() {
        let b = ScriptedBackend::new(vec!["A".into()], true);
        let r = chat(Task::Verdict, "hi");
        assert_eq!(b.generate(&r).unwrap().into_text().unwrap(), "A");
        assert_eq!(b.generate(&r).unwrap_err(), BackendError::ScriptExhausted(1));
    }

    #[test]
    fn improvisation_is_seeded() {
        let run = |seed| {
            let b = ScriptedBackend::new(vec!["first".into()], false).with_seed(seed);
            let r = chat(Task::Verdict, "The well ran dry. The chef wept.");
            (0..4).map(|_| b.generate(&r).unwrap().into_text().unwrap()).collect::<Vec<_>>()
        };
        let a = run(7);
        assert_eq!(a, run(7));
        assert_eq!(a[0], "first");
        let v = parse_verdict(&a[1]).unwrap();
        let prose = v.continuation.unwrap();
        assert!(prose.starts_with("The King pondered…"));
        assert!(prose.contains("The chef wept"));
    }

    #[test]
    fn improvised_replies_satisfy_contracts() {
        let b = ScriptedBackend::formulaic(3);
        let card = b.generate(&chat(Task::Card, "story\nCategory: spear")).unwrap().into_text().unwrap();
        let card: serde_json::Value = serde_json::from_str(&card).unwrap();
        assert!(card["name"].as_str().unwrap().ends_with("Spear"));
        let ending = b.generate(&chat(Task::Ending, "x")).unwrap().into_text().unwrap();
        let ending: serde_json::Value = serde_json::from_str(&ending).unwrap();
        assert_eq!(ending["actions"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn keywords_round_robin() {
        let b = ScriptedBackend::formulaic(1);
        let lex = WeaponLexicon::default();
        let r = chat(Task::Verdict, "A quiet night.");
        let hits: Vec<String> = (0..7)
            .map(|_| {
                let v = parse_verdict(&b.generate(&r).unwrap().into_text().unwrap()).unwrap();
                crate::forge::detect_keyword(&v.continuation.unwrap(), &lex).unwrap().category
            })
            .collect();
        let expected: Vec<String> = lex.categories.iter().map(|c| c.id.clone()).collect();
        assert_eq!(hits, expected);
    }

    #[test]
    fn images_do_not_consume_script() {
        let b = ScriptedBackend::new(vec!["A".into()], true);
        let img = b.generate(&GenerationRequest::image("dunes", 1)).unwrap().into_image().unwrap();
        assert_eq!(img.prompt_used, "dunes");
        assert_eq!(b.consumed(), 0);
    }

    #[test]
    fn missing_script_file() {
        let err = load_script(Path::new("/definitely/not/here.json")).unwrap_err();
        assert!(err.to_string().starts_with("script not found"));
    }
}
