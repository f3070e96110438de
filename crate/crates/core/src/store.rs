//! On-disk layout under the data directory:
//!
//! ```text
//! <data_dir>/sessions/<id>.json
//! <data_dir>/storybooks/<id>.json
//! <data_dir>/storybooks/<id>.md
//! <data_dir>/images/<image id>.png
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::chronicle::{render_markdown, Storybook};
use crate::error::StorageError;
use crate::session::{GameSession, SESSION_SCHEMA};

/// Write-to-temp then rename, so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{file_name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Ids end up in file names; only accept the characters ids are made of.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    data_dir: PathBuf,
}

impl SessionStore {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        SessionStore {
            data_dir: data_dir.into(),
        }
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn session_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("sessions").join(format!("{id}.json"))
    }

    pub fn storybook_json_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("storybooks").join(format!("{id}.json"))
    }

    pub fn storybook_md_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("storybooks").join(format!("{id}.md"))
    }

    pub fn image_path(&self, image_id: &str) -> PathBuf {
        self.data_dir.join("images").join(format!("{image_id}.png"))
    }

    pub fn save(&self, session: &GameSession) -> Result<(), StorageError> {
        let path = self.session_path(&session.id);
        let mut json = serde_json::to_string_pretty(session).expect("session serializes");
        json.push('\n');
        write_atomic(&path, json.as_bytes()).map_err(io_err(&path))
    }

    pub fn load(&self, id: &str) -> Result<Option<GameSession>, StorageError> {
        if !is_safe_id(id) {
            return Ok(None);
        }
        let path = self.session_path(id);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let malformed = |reason: String| StorageError::Malformed {
            path: path.display().to_string(),
            reason,
        };
        let session: GameSession = serde_json::from_str(&raw).map_err(|e| malformed(e.to_string()))?;
        if session.schema != SESSION_SCHEMA {
            return Err(malformed(format!("unsupported schema {}", session.schema)));
        }
        Ok(Some(session))
    }

    pub fn load_storybook(&self, id: &str) -> Result<Option<Storybook>, StorageError> {
        if !is_safe_id(id) {
            return Ok(None);
        }
        let path = self.storybook_json_path(id);
        match fs::read_to_string(&path) {
            Ok(raw) => serde_json::from_str(&raw).map(Some).map_err(|e| StorageError::Malformed {
                path: path.display().to_string(),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Writes the JSON and Markdown renders. Markdown first: the JSON file's
    /// presence marks the storybook as sealed.
    pub fn write_storybook(&self, book: &Storybook) -> Result<(), StorageError> {
        let md = self.storybook_md_path(&book.session_id);
        write_atomic(&md, render_markdown(book).as_bytes()).map_err(io_err(&md))?;
        let json = self.storybook_json_path(&book.session_id);
        write_atomic(&json, book.to_canonical_json().as_bytes()).map_err(io_err(&json))
    }

    pub fn read_storybook_markdown(&self, id: &str) -> Result<Option<String>, StorageError> {
        if !is_safe_id(id) {
            return Ok(None);
        }
        let path = self.storybook_md_path(id);
        match fs::read_to_string(&path) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}
