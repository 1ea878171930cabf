//! Turns pieces into super-tokens and whole puzzles into encoder sequences.
//!
//! A piece is cut into a `T×T` grid of patches, every patch is projected with
//! PCA and replaced by the id of its nearest k-means centroid, and the border
//! ids are read clockwise from the top-left cell. A puzzle is the
//! concatenation of its pieces' super-tokens, sorted lexicographically and
//! joined by a separator id.

mod codebook;
mod dataset;
mod encode;

pub use codebook::{fit_codebook, Codebook, PieceSource, CODEBOOK_FORMAT};
pub use dataset::{
    from_debug_text, to_debug_text, TokenDataset, TokenDatasetHeader, TokenRecord,
    TOKENS_FORMAT,
};
pub use encode::{
    border_cells, encode_puzzle, extract_patches, tokenize_piece, tokenize_pieces,
    EncodedPuzzle, SuperToken,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    /// Patch grid side `T` within a piece.
    pub granularity: usize,
    /// PCA output dimension `d`.
    pub reduced_dim: usize,
    /// Number of centroids `k`.
    pub vocab_size: usize,
    pub use_pca: bool,
    pub border_only: bool,
    pub clockwise: bool,
    pub lex_order: bool,
    pub use_separator: bool,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    /// Training patches above this count are uniformly subsampled.
    pub max_fit_patches: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            granularity: 4,
            reduced_dim: 1024,
            vocab_size: 4096,
            use_pca: true,
            border_only: true,
            clockwise: true,
            lex_order: true,
            use_separator: true,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-6,
            max_fit_patches: 2_000_000,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.granularity == 0 {
            return Err(Error::InvalidArgument("granularity must be at least 1".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidArgument("vocabulary needs at least 2 ids".into()));
        }
        if self.use_pca && self.reduced_dim == 0 {
            return Err(Error::InvalidArgument("reduced dimension must be positive".into()));
        }
        if self.max_fit_patches < self.vocab_size {
            return Err(Error::InvalidArgument(
                "max_fit_patches must be at least the vocabulary size".into(),
            ));
        }
        Ok(())
    }

    /// Ids per super-token: `max(1, 4(T-1))` border cells, or all `T²` cells
    /// when border selection is off.
    pub fn tokens_per_piece(&self) -> usize {
        let t = self.granularity;
        if self.border_only {
            (4 * t.saturating_sub(1)).max(1)
        } else {
            t * t
        }
    }

    /// Encoder length for an `n`-piece puzzle.
    pub fn encoder_len(&self, n: usize) -> usize {
        n * self.tokens_per_piece() + if self.use_separator { n.saturating_sub(1) } else { 0 }
    }

    pub fn specials(&self) -> SpecialIds {
        SpecialIds::after(self.vocab_size)
    }
}

/// Structural ids placed right after the content vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub sep: u32,
    pub mask: u32,
    pub pad: u32,
    pub bos: u32,
}

impl SpecialIds {
    pub fn after(k: usize) -> Self {
        let k = k as u32;
        SpecialIds {
            sep: k,
            mask: k + 1,
            pad: k + 2,
            bos: k + 3,
        }
    }

    /// Total id count including the specials.
    pub fn vocab_len(&self) -> usize {
        self.bos as usize + 1
    }
}
