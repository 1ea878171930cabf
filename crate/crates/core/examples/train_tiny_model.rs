// Train a very small encoder-decoder on tokenized puzzles and save it.

use jigsaw_seq::model::{
    train, AdamConfig, Checkpoint, CheckpointMeta, ModelConfig, ModelShape, TrainerConfig,
};
use jigsaw_seq::pipeline::training_examples;
use jigsaw_seq::puzzle::{make_puzzle, synth_image, Piece};
use jigsaw_seq::tokenizer::{encode_puzzle, fit_codebook, TokenizerConfig};

pub fn run_example() -> anyhow::Result<()> {
    let tok = TokenizerConfig {
        granularity: 2,
        reduced_dim: 8,
        vocab_size: 32,
        ..Default::default()
    };
    let puzzles: Vec<_> = (0..60)
        .map(|s| make_puzzle(&synth_image(s, 24), 3, s + 1, 0))
        .collect::<Result<_, _>>()?;
    let pieces: Vec<Piece> = puzzles.iter().flat_map(|p| p.pieces.clone()).collect();
    let cb = fit_codebook(&pieces, &tok, 1)?;
    let encoded: Vec<_> = puzzles
        .iter()
        .map(|p| encode_puzzle(&cb, p))
        .collect::<Result<_, _>>()?;

    let shape = ModelShape {
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 32,
        dropout_rate: 0.0,
    };
    let cfg = ModelConfig::index_wise(&shape, cb.specials(), 9, tok.encoder_len(9));
    let examples = training_examples(cfg.mode, &cb, &encoded);
    let tc = TrainerConfig {
        steps: 60,
        batch_size: 16,
        micro_batch: 16,
        log_every: 20,
        optimizer: AdamConfig {
            lr: 3e-3,
            warmup_steps: 10,
            total_steps: 60,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = train(&cfg, &tc, &examples, None, |r| {
        println!("step {:>3} loss {:.4} lr {:.1e}", r.step, r.loss, r.lr)
    })?;
    println!("ln(vocab_out) = {:.4}", (cfg.vocab_out as f64).ln());

    let ckpt = Checkpoint {
        config: cfg,
        meta: CheckpointMeta {
            step: tc.steps,
            init_seed: tc.init_seed,
            train_seed: tc.train_seed,
            lineage: format!("codebook={}", cb.digest()),
        },
        params: out.params,
    };
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("tiny.ckpt");
    ckpt.save(&path)?;
    anyhow::ensure!(Checkpoint::load(&path)? == ckpt, "checkpoint roundtrip changed weights");
    println!("saved {} parameters to {}", ckpt.params.num_scalars(), path.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
