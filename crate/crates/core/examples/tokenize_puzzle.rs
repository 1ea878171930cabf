// Fit a small codebook and turn one puzzle into an encoder sequence.

use jigsaw_seq::puzzle::{make_puzzle, synth_image, Piece};
use jigsaw_seq::tokenizer::{encode_puzzle, fit_codebook, to_debug_text, Codebook, TokenizerConfig};

pub fn run_example() -> anyhow::Result<()> {
    let cfg = TokenizerConfig {
        granularity: 4,
        reduced_dim: 8,
        vocab_size: 32,
        ..Default::default()
    };
    let pieces: Vec<Piece> = (0..40)
        .flat_map(|s| make_puzzle(&synth_image(s, 48), 3, s, 0).map(|p| p.pieces))
        .flatten()
        .collect();
    let cb = fit_codebook(&pieces, &cfg, 5)?;
    println!(
        "codebook: {} centroids, tau = {}, specials {:?}",
        cb.kmeans.k(),
        cfg.tokens_per_piece(),
        cb.specials()
    );

    let pz = make_puzzle(&synth_image(1000, 48), 3, 9, 1)?;
    let enc = encode_puzzle(&cb, &pz)?;
    println!("encoder sequence ({} ids):", enc.encoder_ids.len());
    println!("  {}", to_debug_text(&enc.encoder_ids, &cb.specials()));
    println!("target positions: {:?}", enc.labels.as_slice());

    let again = Codebook::from_bytes(&cb.to_bytes())?;
    anyhow::ensure!(again == cb, "codebook did not survive a save/load roundtrip");
    println!("codebook digest {}", cb.digest());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
