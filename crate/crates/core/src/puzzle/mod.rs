//! Square puzzles: cutting images into pieces, shuffling them, and knocking
//! pieces out for the missing-piece setting.

mod image;
pub mod manifest;
mod synth;

pub use self::image::{load_image, write_ppm, Image};
pub use self::synth::synth_image;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};

/// One square piece, channel-last row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub side: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
    /// Row-major grid cell this piece was cut from.
    pub source_position: usize,
    pub present: bool,
}

impl Piece {
    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.side + x) * self.channels + c]
    }
}

/// `assignments[i]` is the grid position of the i-th piece in some piece order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct PermutationLabel(Vec<usize>);

impl PermutationLabel {
    pub fn new(assignments: Vec<usize>) -> Result<Self> {
        if !is_permutation(&assignments) {
            return Err(Error::InvalidArgument(format!(
                "{assignments:?} is not a permutation of 0..{}",
                assignments.len()
            )));
        }
        Ok(PermutationLabel(assignments))
    }

    pub fn identity(n: usize) -> Self {
        PermutationLabel((0..n).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

pub fn is_permutation(xs: &[usize]) -> bool {
    let mut seen = vec![false; xs.len()];
    for &x in xs {
        if x >= xs.len() || seen[x] {
            return false;
        }
        seen[x] = true;
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct PuzzleInstance {
    /// Pieces in shuffled order.
    pub pieces: Vec<Piece>,
    pub grid_side: usize,
    pub shuffle_seed: u64,
    pub missing_count: usize,
}

impl PuzzleInstance {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Ground truth for the shuffled order.
    pub fn labels(&self) -> PermutationLabel {
        PermutationLabel(self.pieces.iter().map(|p| p.source_position).collect())
    }
}

/// Cuts a square image into `grid_side²` pieces, row-major by source position.
pub fn cut_image(img: &Image, grid_side: usize) -> Result<Vec<Piece>> {
    if grid_side == 0 {
        return Err(Error::InvalidArgument("grid side must be positive".into()));
    }
    if !img.is_square() {
        return Err(Error::NotSquare {
            height: img.height,
            width: img.width,
        });
    }
    let remainder = img.height % grid_side;
    if remainder != 0 || img.height == 0 {
        return Err(Error::NotDivisible {
            side: img.height,
            divisor: grid_side,
            remainder,
        });
    }
    let side = img.height / grid_side;
    let mut pieces = Vec::with_capacity(grid_side * grid_side);
    for row in 0..grid_side {
        for col in 0..grid_side {
            let window = img.crop(row * side, col * side, side, side);
            pieces.push(Piece {
                side,
                channels: img.channels,
                pixels: window.data,
                source_position: row * grid_side + col,
                present: true,
            });
        }
    }
    Ok(pieces)
}

/// Places every piece at `positions[i]` and returns the assembled image.
pub fn assemble(pieces: &[Piece], positions: &[usize], grid_side: usize) -> Result<Image> {
    let n = grid_side * grid_side;
    if pieces.len() != n || positions.len() != n {
        return Err(Error::Shape(format!(
            "{} pieces / {} positions for a {grid_side}x{grid_side} grid",
            pieces.len(),
            positions.len()
        )));
    }
    if !is_permutation(positions) {
        return Err(Error::InvalidArgument("positions are not a permutation".into()));
    }
    let side = pieces[0].side;
    let channels = pieces[0].channels;
    if pieces.iter().any(|p| p.side != side || p.channels != channels) {
        return Err(Error::Shape("pieces differ in geometry".into()));
    }
    let full = side * grid_side;
    let mut out = Image::filled(full, full, channels, 0.0);
    for (piece, &pos) in pieces.iter().zip(positions) {
        let (row, col) = (pos / grid_side, pos % grid_side);
        for y in 0..side {
            let dst = out.offset(row * side + y, col * side, 0);
            let src = y * side * channels;
            out.data[dst..dst + side * channels]
                .copy_from_slice(&piece.pixels[src..src + side * channels]);
        }
    }
    Ok(out)
}

/// Inverse of [`cut_image`]: places pieces by their `source_position`.
pub fn reassemble(pieces: &[Piece], grid_side: usize) -> Result<Image> {
    let positions: Vec<usize> = pieces.iter().map(|p| p.source_position).collect();
    assemble(pieces, &positions, grid_side)
}

/// Seeded Fisher-Yates shuffle of the pieces of one image.
pub fn shuffle(mut pieces: Vec<Piece>, seed: u64) -> PuzzleInstance {
    let grid_side = (pieces.len() as f64).sqrt().round() as usize;
    SeededRng::new(seed).shuffle(&mut pieces);
    let missing_count = pieces.iter().filter(|p| !p.present).count();
    PuzzleInstance {
        pieces,
        grid_side,
        shuffle_seed: seed,
        missing_count,
    }
}

/// Flags exactly `m` pieces as missing, chosen uniformly by `seed`. Pixel data
/// is left untouched; downstream encoding masks the flagged pieces.
pub fn mark_missing(mut pz: PuzzleInstance, m: usize, seed: u64) -> Result<PuzzleInstance> {
    let n = pz.pieces.len();
    if m >= n {
        return Err(Error::TooManyMissing {
            requested: m,
            pieces: n,
        });
    }
    for p in &mut pz.pieces {
        p.present = true;
    }
    for i in SeededRng::new(seed).sample_distinct(n, m) {
        pz.pieces[i].present = false;
    }
    pz.missing_count = m;
    Ok(pz)
}

/// Seed used for choosing missing pieces of a puzzle shuffled with `shuffle_seed`.
pub fn missing_seed(shuffle_seed: u64) -> u64 {
    derive_seed(shuffle_seed, 0x6d69_7373)
}

/// Cut, shuffle and mask in one go.
pub fn make_puzzle(
    img: &Image,
    grid_side: usize,
    shuffle_seed: u64,
    missing_count: usize,
) -> Result<PuzzleInstance> {
    let pz = shuffle(cut_image(img, grid_side)?, shuffle_seed);
    mark_missing(pz, missing_count, missing_seed(shuffle_seed))
}
