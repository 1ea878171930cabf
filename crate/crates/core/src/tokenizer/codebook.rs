use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SpecialIds, TokenizerConfig};
use crate::container;
use crate::error::{Error, Result};
use crate::numerics::{kmeans_fit, pca_transform, KMeansModel, Matrix, PcaModel, ScatterAccumulator};
use crate::puzzle::Piece;
use crate::rng::{derive_seed, SeededRng};

use super::encode::extract_patches;

pub const CODEBOOK_FORMAT: &str = "jigsaw-seq/codebook/1";
const MAGIC: &[u8; 4] = b"PZCB";
const CHUNK_ROWS: usize = 4096;

/// Fitted tokenizer state. Immutable once fitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub config: TokenizerConfig,
    pub piece_side: usize,
    pub channels: usize,
    pub pca: Option<PcaModel>,
    pub kmeans: KMeansModel,
    pub seed: u64,
    /// Patches actually used for fitting, after subsampling.
    pub fit_patches: usize,
    /// Free-form provenance string stamped by the pipeline.
    pub lineage: String,
}

/// Anything that can replay the training pieces, possibly more than once.
pub trait PieceSource {
    fn visit(&self, f: &mut dyn FnMut(&Piece) -> Result<()>) -> Result<()>;
}

impl PieceSource for [Piece] {
    fn visit(&self, f: &mut dyn FnMut(&Piece) -> Result<()>) -> Result<()> {
        self.iter().try_for_each(f)
    }
}

impl PieceSource for Vec<Piece> {
    fn visit(&self, f: &mut dyn FnMut(&Piece) -> Result<()>) -> Result<()> {
        self.as_slice().visit(f)
    }
}

/// Walks every selected training patch in order, `CHUNK_ROWS` at a time.
fn for_each_chunk(
    source: &dyn PieceSource,
    granularity: usize,
    dim: usize,
    keep: Option<&[bool]>,
    f: &mut dyn FnMut(&Matrix) -> Result<()>,
) -> Result<()> {
    let mut chunk = Vec::with_capacity(CHUNK_ROWS * dim);
    let mut index = 0usize;
    source.visit(&mut |piece| {
        let patches = extract_patches(piece, granularity)?;
        for r in 0..patches.rows {
            if keep.is_none_or(|k| k[index]) {
                chunk.extend_from_slice(patches.row(r));
                if chunk.len() == CHUNK_ROWS * dim {
                    f(&Matrix::from_vec(CHUNK_ROWS, dim, std::mem::take(&mut chunk))?)?;
                }
            }
            index += 1;
        }
        Ok(())
    })?;
    if !chunk.is_empty() {
        f(&Matrix::from_vec(chunk.len() / dim, dim, chunk)?)?;
    }
    Ok(())
}

/// Fits PCA (optional) and k-means over the patches of the training pieces.
///
/// Centroids are renumbered in lexicographic order of their coordinates, so
/// id order follows the leading principal coordinate and does not depend on
/// the order k-means++ happened to pick seeds in.
pub fn fit_codebook(source: &dyn PieceSource, cfg: &TokenizerConfig, seed: u64) -> Result<Codebook> {
    cfg.validate()?;
    let t = cfg.granularity;
    let mut geometry: Option<(usize, usize)> = None;
    let mut total = 0usize;
    source.visit(&mut |p| {
        match geometry {
            None => geometry = Some((p.side, p.channels)),
            Some(g) if g != (p.side, p.channels) => {
                return Err(Error::Shape("training pieces differ in geometry".into()))
            }
            _ => {}
        }
        if p.side % t != 0 {
            return Err(Error::NotDivisible {
                side: p.side,
                divisor: t,
                remainder: p.side % t,
            });
        }
        total += t * t;
        Ok(())
    })?;
    let Some((piece_side, channels)) = geometry else {
        return Err(Error::InsufficientData("no training pieces".into()));
    };
    let patch_side = piece_side / t;
    let dim = patch_side * patch_side * channels;

    let keep: Option<Vec<bool>> = (total > cfg.max_fit_patches).then(|| {
        let mut mask = vec![false; total];
        let mut rng = SeededRng::new(derive_seed(seed, 2));
        for i in rng.sample_distinct(total, cfg.max_fit_patches) {
            mask[i] = true;
        }
        mask
    });
    let used = keep.as_ref().map_or(total, |_| cfg.max_fit_patches);

    let pca = if cfg.use_pca {
        if cfg.reduced_dim > dim {
            return Err(Error::InvalidArgument(format!(
                "reduced dimension {} exceeds patch dimension {dim}",
                cfg.reduced_dim
            )));
        }
        let mut acc = ScatterAccumulator::new(dim);
        for_each_chunk(source, t, dim, keep.as_deref(), &mut |m| acc.push_rows(m))?;
        Some(PcaModel::from_scatter(&acc, cfg.reduced_dim)?)
    } else {
        None
    };

    let out_dim = pca.as_ref().map_or(dim, PcaModel::output_dim);
    let mut features = Vec::with_capacity(used * out_dim);
    for_each_chunk(source, t, dim, keep.as_deref(), &mut |m| {
        match &pca {
            Some(p) => features.extend_from_slice(&pca_transform(p, m)?.data),
            None => features.extend_from_slice(&m.data),
        }
        Ok(())
    })?;
    let features = Matrix::from_vec(used, out_dim, features)?;

    let distinct: HashSet<Vec<u64>> = (0..features.rows)
        .map(|r| features.row(r).iter().map(|v| v.to_bits()).collect())
        .collect();
    if distinct.len() < cfg.vocab_size {
        return Err(Error::InsufficientData(format!(
            "{} distinct patch vectors for a vocabulary of {}",
            distinct.len(),
            cfg.vocab_size
        )));
    }

    let mut kmeans = kmeans_fit(
        &features,
        cfg.vocab_size,
        derive_seed(seed, 1),
        cfg.kmeans_max_iter,
        cfg.kmeans_tol,
    )?;
    let k = kmeans.k();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (kmeans.centroids.row(a), kmeans.centroids.row(b));
        ra.iter()
            .zip(rb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut sorted = Matrix::zeros(k, out_dim);
    for (dst, &src) in order.iter().enumerate() {
        sorted.row_mut(dst).copy_from_slice(kmeans.centroids.row(src));
    }
    kmeans.centroids = sorted;

    Ok(Codebook {
        config: cfg.clone(),
        piece_side,
        channels,
        pca,
        kmeans,
        seed,
        fit_patches: used,
        lineage: String::new(),
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    endianness: String,
    config: TokenizerConfig,
    piece_side: usize,
    channels: usize,
    specials: SpecialIds,
    seed: u64,
    fit_patches: usize,
    lineage: String,
    /// `[input_dim, output_dim]` when PCA is on.
    pca_shape: Option<[usize; 2]>,
    centroids_shape: [usize; 2],
    kmeans_iterations: usize,
    inertia_history_len: usize,
    /// Payload order after the header.
    arrays: Vec<String>,
}

impl Codebook {
    pub fn specials(&self) -> SpecialIds {
        self.config.specials()
    }

    /// Content ids plus the special block.
    pub fn vocab_len(&self) -> usize {
        self.specials().vocab_len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.kmeans.centroids;
        let mut arrays = Vec::new();
        let mut blobs: Vec<&[f64]> = Vec::new();
        if let Some(p) = &self.pca {
            arrays.extend(["pca.mean", "pca.components", "pca.explained_variance"].map(String::from));
            blobs.extend([&p.mean[..], &p.components.data[..], &p.explained_variance[..]]);
        }
        let inertia = [self.kmeans.inertia];
        arrays.extend(["kmeans.centroids", "kmeans.inertia", "kmeans.inertia_history"].map(String::from));
        blobs.extend([&c.data[..], &inertia[..], &self.kmeans.inertia_history[..]]);
        let header = Header {
            format: CODEBOOK_FORMAT.into(),
            endianness: "little".into(),
            config: self.config.clone(),
            piece_side: self.piece_side,
            channels: self.channels,
            specials: self.specials(),
            seed: self.seed,
            fit_patches: self.fit_patches,
            lineage: self.lineage.clone(),
            pca_shape: self.pca.as_ref().map(|p| [p.input_dim(), p.output_dim()]),
            centroids_shape: [c.rows, c.cols],
            kmeans_iterations: self.kmeans.iterations_run,
            inertia_history_len: self.kmeans.inertia_history.len(),
            arrays,
        };
        container::encode(MAGIC, &header, &blobs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut blobs): (Header, _) = container::decode("codebook", MAGIC, bytes)?;
        if h.format != CODEBOOK_FORMAT || h.endianness != "little" {
            return Err(Error::format("codebook", format!("unsupported {} / {}", h.format, h.endianness)));
        }
        let pca = match h.pca_shape {
            Some([input, output]) => {
                let mean = blobs.take(input)?;
                let components = Matrix::from_vec(output, input, blobs.take(output * input)?)?;
                let explained_variance = blobs.take(output)?;
                Some(PcaModel {
                    mean,
                    components,
                    explained_variance,
                })
            }
            None => None,
        };
        let [k, d] = h.centroids_shape;
        let centroids = Matrix::from_vec(k, d, blobs.take(k * d)?)?;
        let inertia = blobs.take(1)?[0];
        let inertia_history = blobs.take(h.inertia_history_len)?;
        blobs.finish()?;
        if k != h.config.vocab_size {
            return Err(Error::format("codebook", "centroid count differs from vocabulary size"));
        }
        Ok(Codebook {
            config: h.config,
            piece_side: h.piece_side,
            channels: h.channels,
            pca,
            kmeans: KMeansModel {
                centroids,
                inertia,
                iterations_run: h.kmeans_iterations,
                inertia_history,
            },
            seed: h.seed,
            fit_patches: h.fit_patches,
            lineage: h.lineage,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn digest(&self) -> String {
        container::sha256_hex(&self.to_bytes())
    }
}
