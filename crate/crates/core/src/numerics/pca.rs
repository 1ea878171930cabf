use serde::{Deserialize, Serialize};

use super::matrix::{gemm_acc, Matrix};
use crate::error::{Error, Result};

/// Projection onto the top principal directions of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d×D`, one orthonormal principal direction per row.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows
    }

    /// Fits from accumulated second moments.
    ///
    /// Eigenpairs of the sample covariance come from a full symmetric
    /// eigendecomposition, sorted by descending eigenvalue (ties keep solver
    /// order). Each direction is flipped so its largest-magnitude entry is
    /// positive; on exact magnitude ties the lowest index wins.
    pub fn from_scatter(acc: &ScatterAccumulator, d: usize) -> Result<Self> {
        let n = acc.count;
        let dim = acc.dim;
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "PCA needs at least 2 rows, got {n}"
            )));
        }
        if d == 0 || d > dim || d > n - 1 {
            return Err(Error::InvalidArgument(format!(
                "PCA dimension {d} outside 1..={}",
                dim.min(n - 1)
            )));
        }
        let denom = (n - 1) as f64;
        let cov = nalgebra::DMatrix::from_fn(dim, dim, |r, c| {
            0.5 * (acc.scatter[r * dim + c] + acc.scatter[c * dim + r]) / denom
        });
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut components = Matrix::zeros(d, dim);
        let mut explained_variance = Vec::with_capacity(d);
        for (row, &idx) in order.iter().take(d).enumerate() {
            let v = eig.eigenvectors.column(idx);
            let mut pivot = 0;
            for j in 1..dim {
                if v[j].abs() > v[pivot].abs() {
                    pivot = j;
                }
            }
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..dim {
                components.set(row, j, sign * v[j]);
            }
            explained_variance.push(eig.eigenvalues[idx].max(0.0));
        }
        Ok(PcaModel {
            mean: acc.mean.clone(),
            components,
            explained_variance,
        })
    }
}

/// Streaming mean and centered scatter matrix.
///
/// Chunks are merged with the pairwise update of Chan et al., so feeding the
/// same rows in the same chunking always gives bit-identical moments.
#[derive(Debug, Clone)]
pub struct ScatterAccumulator {
    dim: usize,
    count: usize,
    mean: Vec<f64>,
    scatter: Vec<f64>,
}

impl ScatterAccumulator {
    pub fn new(dim: usize) -> Self {
        ScatterAccumulator {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            scatter: vec![0.0; dim * dim],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push_rows(&mut self, rows: &Matrix) -> Result<()> {
        if rows.cols != self.dim {
            return Err(Error::Shape(format!(
                "expected {} columns, got {}",
                self.dim, rows.cols
            )));
        }
        if rows.rows == 0 {
            return Ok(());
        }
        let nb = rows.rows;
        // Shifting by the first row keeps the mean exact for constant columns.
        let shift = rows.row(0).to_vec();
        let mut mean_b = vec![0.0; self.dim];
        for r in 0..nb {
            for ((m, v), s) in mean_b.iter_mut().zip(rows.row(r)).zip(&shift) {
                *m += v - s;
            }
        }
        for (m, s) in mean_b.iter_mut().zip(&shift) {
            *m = s + *m / nb as f64;
        }
        let mut centered = rows.data.clone();
        for r in 0..nb {
            for (v, m) in centered[r * self.dim..(r + 1) * self.dim]
                .iter_mut()
                .zip(&mean_b)
            {
                *v -= m;
            }
        }
        let na = self.count;
        let n = (na + nb) as f64;
        let delta: Vec<f64> = mean_b.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let w = na as f64 * nb as f64 / n;
        for r in 0..self.dim {
            for c in 0..self.dim {
                self.scatter[r * self.dim + c] += w * delta[r] * delta[c];
            }
        }
        // scatter += centeredᵀ · centered
        gemm_acc(
            self.dim,
            nb,
            self.dim,
            &centered,
            (1, self.dim),
            &centered,
            (self.dim, 1),
            &mut self.scatter,
            1.0,
        );
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d * nb as f64 / n;
        }
        self.count += nb;
        Ok(())
    }
}

pub fn pca_fit(x: &Matrix, d: usize) -> Result<PcaModel> {
    let mut acc = ScatterAccumulator::new(x.cols);
    acc.push_rows(x)?;
    PcaModel::from_scatter(&acc, d)
}

/// `(X - mean) · componentsᵀ`.
pub fn pca_transform(model: &PcaModel, x: &Matrix) -> Result<Matrix> {
    if x.cols != model.input_dim() {
        return Err(Error::Shape(format!(
            "PCA expects {} columns, got {}",
            model.input_dim(),
            x.cols
        )));
    }
    let mut centered = x.clone();
    for r in 0..x.rows {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&model.mean) {
            *v -= m;
        }
    }
    centered.matmul_t(&model.components)
}

/// Maps projected rows back to input space: `Y · components + mean`.
pub fn pca_inverse(model: &PcaModel, y: &Matrix) -> Result<Matrix> {
    let mut out = y.matmul(&model.components)?;
    for r in 0..out.rows {
        for (v, m) in out.row_mut(r).iter_mut().zip(&model.mean) {
            *v += m;
        }
    }
    Ok(out)
}
