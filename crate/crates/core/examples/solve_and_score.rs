// Decode puzzles with a model, score them, and recover placements from an
// element-wise generation by Hamming matching.

use jigsaw_seq::model::{ModelConfig, ModelParams, ModelShape};
use jigsaw_seq::puzzle::{make_puzzle, synth_image, Piece};
use jigsaw_seq::solver::{
    element_wise_target, evaluate, match_spans, segment_generation, IndexWiseSolver, PermutationSolver,
    Scoring,
};
use jigsaw_seq::tokenizer::{encode_puzzle, fit_codebook, TokenizerConfig};

pub fn run_example() -> anyhow::Result<()> {
    let tok = TokenizerConfig {
        granularity: 2,
        reduced_dim: 8,
        vocab_size: 32,
        ..Default::default()
    };
    let puzzles: Vec<_> = (0..30)
        .map(|s| make_puzzle(&synth_image(s, 24), 3, s, 0))
        .collect::<Result<_, _>>()?;
    let pieces: Vec<Piece> = puzzles.iter().flat_map(|p| p.pieces.clone()).collect();
    let cb = fit_codebook(&pieces, &tok, 1)?;
    let encoded: Vec<_> = puzzles
        .iter()
        .map(|p| encode_puzzle(&cb, p))
        .collect::<Result<_, _>>()?;

    // an untrained model still yields valid permutations
    let shape = ModelShape {
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 32,
        dropout_rate: 0.0,
    };
    let cfg = ModelConfig::index_wise(&shape, cb.specials(), 9, tok.encoder_len(9));
    let params = ModelParams::init(&cfg, 0)?;
    let greedy = IndexWiseSolver::greedy(&params, &cfg);
    let r = greedy.solve(&encoded[0])?;
    println!("greedy placement {:?}", r.predicted.as_slice());
    println!("candidates per step {:?}", r.candidate_counts);
    let beam = IndexWiseSolver {
        beam_width: 3,
        ..greedy
    };
    println!("beam-3 placement   {:?}", beam.solve(&encoded[0])?.predicted.as_slice());

    let summary = evaluate(&greedy, &encoded, Scoring::AllPositions, 1)?;
    println!(
        "untrained: absolute {:.3} perfect {:.3} on {} puzzles (chance 1/9 = {:.3})",
        summary.absolute,
        summary.perfect,
        summary.n_puzzles,
        1.0 / 9.0
    );

    // element-wise: a perfect regeneration maps back to the true labels
    let e = &encoded[1];
    let generated = element_wise_target(e, cb.specials());
    let (spans, violation) = segment_generation(&generated, 9, e.tau, e.separated, cb.specials().sep);
    let recovered = match_spans(e, &spans)?;
    println!("element-wise recovery exact: {} (structure violation: {violation})", recovered == e.labels);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
