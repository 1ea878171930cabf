// Cut a synthetic image into a 3x3 puzzle, shuffle it, knock out a piece,
// and put it back together from the labels.

use jigsaw_seq::puzzle::{assemble, cut_image, make_puzzle, synth_image, write_ppm};

pub fn run_example() -> anyhow::Result<()> {
    let img = synth_image(42, 96);
    let pieces = cut_image(&img, 3)?;
    println!("{} pieces of {}x{} px", pieces.len(), pieces[0].side, pieces[0].side);

    let pz = make_puzzle(&img, 3, 7, 1)?;
    let order: Vec<usize> = pz.pieces.iter().map(|p| p.source_position).collect();
    println!("shuffled source positions: {order:?}");
    let missing: Vec<usize> = pz
        .pieces
        .iter()
        .filter(|p| !p.present)
        .map(|p| p.source_position)
        .collect();
    println!("missing: {missing:?}");

    // placing every piece at its label reproduces the source exactly
    let back = assemble(&pz.pieces, &order, 3)?;
    anyhow::ensure!(back == img, "reassembly differs from the source image");

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("puzzle.ppm");
    write_ppm(&back, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
