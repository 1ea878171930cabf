//! Encoder-decoder transformer trained from scratch with its own
//! reverse-mode differentiation.

mod optim;
mod params;
mod tape;
mod train;
mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::SpecialIds;

pub use optim::{AdamConfig, OptimizerState, StepStats};
pub use params::{Checkpoint, CheckpointMeta, ModelParams, Tensor, CHECKPOINT_FORMAT};
pub use tape::{AttnGeom, Tape, Var};
pub use train::{train, TrainLogRecord, TrainOutcome, TrainerConfig};
pub use transformer::{
    decoder_logits, encode_source, forward, loss_and_grads, loss_only, EncoderMemory, Example,
    Logits,
};

/// What the decoder emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Grid positions `0..N`, then BOS and PAD.
    IndexWise,
    /// The solved puzzle's own token sequence, sharing the encoder id space.
    ElementWise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: OutputMode,
    pub vocab_in: usize,
    pub vocab_out: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub dropout_rate: f64,
    pub src_pad: u32,
    pub tgt_bos: u32,
    pub tgt_pad: u32,
}

/// Size knobs shared by both output modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            d_model: 128,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 512,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    /// Decoder over `n_pieces` grid positions.
    pub fn index_wise(shape: &ModelShape, specials: SpecialIds, n_pieces: usize, src_len: usize) -> Self {
        Self::from_shape(
            shape,
            OutputMode::IndexWise,
            specials.vocab_len(),
            n_pieces + 2,
            src_len,
            n_pieces,
            specials.pad,
            n_pieces as u32,
            n_pieces as u32 + 1,
        )
    }

    /// Decoder that regenerates `tgt_len` content/separator tokens.
    pub fn element_wise(shape: &ModelShape, specials: SpecialIds, src_len: usize, tgt_len: usize) -> Self {
        Self::from_shape(
            shape,
            OutputMode::ElementWise,
            specials.vocab_len(),
            specials.vocab_len(),
            src_len,
            tgt_len,
            specials.pad,
            specials.bos,
            specials.pad,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn from_shape(
        shape: &ModelShape,
        mode: OutputMode,
        vocab_in: usize,
        vocab_out: usize,
        max_src_len: usize,
        max_tgt_len: usize,
        src_pad: u32,
        tgt_bos: u32,
        tgt_pad: u32,
    ) -> Self {
        ModelConfig {
            mode,
            vocab_in,
            vocab_out,
            d_model: shape.d_model,
            n_heads: shape.n_heads,
            n_enc_layers: shape.n_enc_layers,
            n_dec_layers: shape.n_dec_layers,
            d_ff: shape.d_ff,
            max_src_len,
            max_tgt_len,
            dropout_rate: shape.dropout_rate,
            src_pad,
            tgt_bos,
            tgt_pad,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    /// Number of target classes that are real outputs (excludes BOS/PAD in
    /// index-wise mode).
    pub fn n_positions(&self) -> usize {
        match self.mode {
            OutputMode::IndexWise => self.vocab_out - 2,
            OutputMode::ElementWise => self.vocab_out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d_model == 0 || self.n_heads == 0 {
            return bad("d_model and n_heads must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 || self.max_src_len == 0 || self.max_tgt_len == 0 {
            return bad("d_ff, max_src_len and max_tgt_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.src_pad as usize >= self.vocab_in {
            return bad("src_pad outside the input vocabulary".into());
        }
        if self.tgt_bos as usize >= self.vocab_out || self.tgt_pad as usize >= self.vocab_out {
            return bad("target specials outside the output vocabulary".into());
        }
        if self.mode == OutputMode::IndexWise
            && (self.vocab_out < 3
                || self.tgt_bos as usize != self.vocab_out - 2
                || self.tgt_pad as usize != self.vocab_out - 1)
        {
            return bad("index-wise outputs must be positions followed by BOS and PAD".into());
        }
        Ok(())
    }
}
