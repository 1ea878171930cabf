use super::Codebook;
use crate::error::{Error, Result};
use crate::numerics::{nearest_centroid, pca_transform, Matrix};
use crate::puzzle::{PermutationLabel, Piece, PuzzleInstance};

/// Token ids of one piece, in serialization order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SuperToken(pub Vec<u32>);

/// Flattens each cell of the `T×T` patch grid (row-major over the grid,
/// channel-last row-major inside a patch) into one row.
pub fn extract_patches(piece: &Piece, granularity: usize) -> Result<Matrix> {
    if granularity == 0 || piece.side % granularity != 0 {
        return Err(Error::NotDivisible {
            side: piece.side,
            divisor: granularity,
            remainder: if granularity == 0 { 0 } else { piece.side % granularity },
        });
    }
    let ps = piece.side / granularity;
    let c = piece.channels;
    let dim = ps * ps * c;
    let mut out = Matrix::zeros(granularity * granularity, dim);
    for gy in 0..granularity {
        for gx in 0..granularity {
            let row = out.row_mut(gy * granularity + gx);
            for y in 0..ps {
                let src = ((gy * ps + y) * piece.side + gx * ps) * c;
                row[y * ps * c..(y + 1) * ps * c]
                    .copy_from_slice(&piece.pixels[src..src + ps * c]);
            }
        }
    }
    Ok(out)
}

/// Cell indices (row-major in the `T×T` grid) emitted for one piece.
///
/// Clockwise order starts at the top-left cell: top row left to right, right
/// column downwards, bottom row right to left, left column upwards. The
/// raster variant lists the same border cells in row-major order; with
/// `border_only` off every cell is emitted row-major.
pub fn border_cells(granularity: usize, border_only: bool, clockwise: bool) -> Vec<usize> {
    let t = granularity;
    if !border_only {
        return (0..t * t).collect();
    }
    if t == 1 {
        return vec![0];
    }
    if !clockwise {
        return (0..t * t)
            .filter(|&i| {
                let (r, c) = (i / t, i % t);
                r == 0 || c == 0 || r == t - 1 || c == t - 1
            })
            .collect();
    }
    let at = |r: usize, c: usize| r * t + c;
    let mut cells = Vec::with_capacity(4 * (t - 1));
    cells.extend((0..t).map(|c| at(0, c)));
    cells.extend((1..t).map(|r| at(r, t - 1)));
    cells.extend((0..t - 1).rev().map(|c| at(t - 1, c)));
    cells.extend((1..t - 1).rev().map(|r| at(r, 0)));
    cells
}

fn check_geometry(cb: &Codebook, piece: &Piece) -> Result<()> {
    if piece.side != cb.piece_side || piece.channels != cb.channels {
        return Err(Error::Shape(format!(
            "piece is {}px x{} channels, codebook expects {}px x{}",
            piece.side, piece.channels, cb.piece_side, cb.channels
        )));
    }
    Ok(())
}

/// Quantized ids of every patch of every piece, row-major per piece.
fn patch_ids(cb: &Codebook, pieces: &[Piece]) -> Result<Vec<Vec<u32>>> {
    let t = cb.config.granularity;
    let cells = t * t;
    let mut stacked: Option<Matrix> = None;
    for (i, piece) in pieces.iter().enumerate() {
        check_geometry(cb, piece)?;
        let patches = extract_patches(piece, t)?;
        let all = stacked.get_or_insert_with(|| Matrix::zeros(pieces.len() * cells, patches.cols));
        all.data[i * cells * patches.cols..(i + 1) * cells * patches.cols]
            .copy_from_slice(&patches.data);
    }
    let Some(stacked) = stacked else {
        return Ok(Vec::new());
    };
    let projected = match &cb.pca {
        Some(pca) => pca_transform(pca, &stacked)?,
        None => stacked,
    };
    let centroids = &cb.kmeans.centroids;
    if projected.cols != centroids.cols {
        return Err(Error::Shape("projected patches do not match centroids".into()));
    }
    Ok((0..pieces.len())
        .map(|i| {
            (0..cells)
                .map(|c| nearest_centroid(centroids, projected.row(i * cells + c)).0 as u32)
                .collect()
        })
        .collect())
}

pub fn tokenize_pieces(cb: &Codebook, pieces: &[Piece]) -> Result<Vec<SuperToken>> {
    let order = border_cells(
        cb.config.granularity,
        cb.config.border_only,
        cb.config.clockwise,
    );
    Ok(patch_ids(cb, pieces)?
        .into_iter()
        .map(|ids| SuperToken(order.iter().map(|&c| ids[c]).collect()))
        .collect())
}

pub fn tokenize_piece(cb: &Codebook, piece: &Piece) -> Result<SuperToken> {
    Ok(tokenize_pieces(cb, std::slice::from_ref(piece))?.remove(0))
}

/// Encoder input plus decoder target for one puzzle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPuzzle {
    pub encoder_ids: Vec<u32>,
    /// Grid position of each piece in encoder order.
    pub labels: PermutationLabel,
    /// Shuffled-order index of each piece in encoder order.
    pub piece_order: Vec<usize>,
    /// Missing flag of each piece in encoder order.
    pub missing: Vec<bool>,
    pub tau: usize,
    pub separated: bool,
}

impl EncodedPuzzle {
    pub fn n_pieces(&self) -> usize {
        self.labels.len()
    }

    fn span_start(&self, i: usize) -> usize {
        i * (self.tau + usize::from(self.separated))
    }

    /// Super-token ids of the i-th piece in encoder order.
    pub fn span(&self, i: usize) -> &[u32] {
        let s = self.span_start(i);
        &self.encoder_ids[s..s + self.tau]
    }

    pub fn spans(&self) -> impl Iterator<Item = &[u32]> + '_ {
        (0..self.n_pieces()).map(|i| self.span(i))
    }
}

/// Tokenizes every piece, masks missing ones, orders and joins the spans.
pub fn encode_puzzle(cb: &Codebook, pz: &PuzzleInstance) -> Result<EncodedPuzzle> {
    let cfg = &cb.config;
    let specials = cb.specials();
    let mut tokens = tokenize_pieces(cb, &pz.pieces)?;
    for (tok, piece) in tokens.iter_mut().zip(&pz.pieces) {
        if !piece.present {
            tok.0.iter_mut().for_each(|id| *id = specials.mask);
        }
    }
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    if cfg.lex_order {
        // stable: equal super-tokens keep shuffled order
        order.sort_by(|&a, &b| tokens[a].cmp(&tokens[b]));
    }
    let tau = cfg.tokens_per_piece();
    let mut encoder_ids = Vec::with_capacity(cfg.encoder_len(order.len()));
    for (slot, &i) in order.iter().enumerate() {
        if slot > 0 && cfg.use_separator {
            encoder_ids.push(specials.sep);
        }
        encoder_ids.extend_from_slice(&tokens[i].0);
    }
    let labels = PermutationLabel::new(order.iter().map(|&i| pz.pieces[i].source_position).collect())?;
    Ok(EncodedPuzzle {
        encoder_ids,
        labels,
        missing: order.iter().map(|&i| !pz.pieces[i].present).collect(),
        piece_order: order,
        tau,
        separated: cfg.use_separator,
    })
}
