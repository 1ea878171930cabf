//! Dataset manifest: one JSON document describing every puzzle of a split.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_image, make_puzzle, synth_image, Image, PuzzleInstance};
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "jigsaw-seq/manifest/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Seed(u64),
    Path(String),
}

/// Field order is the serialization order; keep it stable for diffs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source: ImageSource,
    pub grid_side: usize,
    pub missing_count: usize,
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub split: String,
    pub config_digest: String,
    pub piece_px: usize,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(split: &str, config_digest: &str, piece_px: usize, entries: Vec<ManifestEntry>) -> Self {
        Manifest {
            format: MANIFEST_FORMAT.to_string(),
            split: split.to_string(),
            config_digest: config_digest.to_string(),
            piece_px,
            entries,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::format("manifest", format!("unknown format {:?}", m.format)));
        }
        Ok(m)
    }

    /// Materializes the source image of an entry at `grid_side * piece_px` pixels.
    /// Relative paths resolve against `base_dir`.
    pub fn image(&self, entry: &ManifestEntry, base_dir: &Path) -> Result<Image> {
        let side = entry.grid_side * self.piece_px;
        match &entry.source {
            ImageSource::Seed(seed) => Ok(synth_image(*seed, side)),
            ImageSource::Path(p) => {
                let mut path = PathBuf::from(p);
                if path.is_relative() {
                    path = base_dir.join(path);
                }
                prepare_image(&load_image(&path)?, entry.grid_side, self.piece_px)
            }
        }
    }

    pub fn puzzle(&self, entry: &ManifestEntry, base_dir: &Path) -> Result<PuzzleInstance> {
        let img = self.image(entry, base_dir)?;
        make_puzzle(&img, entry.grid_side, entry.shuffle_seed, entry.missing_count)
    }

    pub fn puzzles<'a>(
        &'a self,
        base_dir: &'a Path,
    ) -> impl Iterator<Item = Result<(&'a ManifestEntry, PuzzleInstance)>> + 'a {
        self.entries
            .iter()
            .map(move |e| self.puzzle(e, base_dir).map(|p| (e, p)))
    }
}

/// Center-crops to the largest grid-divisible square, then resamples so each
/// piece is `piece_px` wide.
pub fn prepare_image(img: &Image, grid_side: usize, piece_px: usize) -> Result<Image> {
    let square = img.center_crop_to_grid(grid_side)?;
    Ok(square.resize_square(grid_side * piece_px))
}
