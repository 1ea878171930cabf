//! Blind square-jigsaw solving as sequence-to-sequence prediction.
//!
//! Pieces are quantized into discrete super-tokens (border patches, PCA,
//! k-means), a small encoder-decoder transformer predicts where each piece
//! goes, and a corpus-statistics suite characterizes the token streams.

pub mod analysis;
mod container;
pub mod error;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod puzzle;
pub mod rng;
pub mod solver;
pub mod tokenizer;

pub use container::sha256_hex;
pub use error::{Error, Result};
