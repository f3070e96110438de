use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{BackendError, SceneImageRef};
use crate::clock::Clock;
use crate::store::write_atomic;

pub const PLACEHOLDER_SIZE: u32 = 512;

/// Writes generated pictures under `<data_dir>/images/`.
#[derive(Clone)]
pub struct ImageStore {
    data_dir: PathBuf,
    clock: Arc<dyn Clock>,
}

impl ImageStore {
    pub fn new(data_dir: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> Self {
        ImageStore {
            data_dir: data_dir.into(),
            clock,
        }
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn image_id(prompt: &str, seed: u64) -> String {
        let digest = Sha256::digest(format!("{seed}|{prompt}").as_bytes());
        format!("img-{}", &hex::encode(digest)[..16])
    }

    pub fn store(&self, prompt: &str, seed: u64, png: &[u8]) -> Result<SceneImageRef, BackendError> {
        let id = Self::image_id(prompt, seed);
        let relative = format!("images/{id}.png");
        write_atomic(&self.data_dir.join(&relative), png).map_err(|e| BackendError::Storage(e.to_string()))?;
        Ok(SceneImageRef {
            id,
            path_or_url: relative,
            prompt_used: prompt.to_owned(),
            created_at: self.clock.now(),
        })
    }
}

/// The solid colour a placeholder takes for `prompt`: the first three bytes
/// of its SHA-256.
pub fn placeholder_color(prompt: &str) -> [u8; 3] {
    let digest = Sha256::digest(prompt.as_bytes());
    [digest[0], digest[1], digest[2]]
}

/// A 512×512 RGB PNG filled with [`placeholder_color`]. Same prompt, same bytes.
pub fn placeholder_png(prompt: &str) -> Vec<u8> {
    let rgb = placeholder_color(prompt);
    let pixels: Vec<u8> = rgb
        .iter()
        .copied()
        .cycle()
        .take((PLACEHOLDER_SIZE * PLACEHOLDER_SIZE * 3) as usize)
        .collect();
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, PLACEHOLDER_SIZE, PLACEHOLDER_SIZE);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("in-memory png header");
        writer.write_image_data(&pixels).expect("in-memory png body");
    }
    out
}
