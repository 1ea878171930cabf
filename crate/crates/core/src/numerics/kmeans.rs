use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    /// `k×d`.
    pub centroids: Matrix,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after every assignment step, ending with the final one.
    pub inertia_history: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.rows
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the closest centroid; ties go to the lowest index.
#[inline]
pub fn nearest_centroid(centroids: &Matrix, point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_all(centroids: &Matrix, x: &Matrix, labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for r in 0..x.rows {
        let (c, d) = nearest_centroid(centroids, x.row(r));
        labels[r] = c;
        dists[r] = d;
        inertia += d;
    }
    inertia
}

fn plus_plus_init(x: &Matrix, k: usize, rng: &mut SeededRng) -> Matrix {
    let mut centroids = Matrix::zeros(k, x.cols);
    let first = rng.index(x.rows);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut closest: Vec<f64> = (0..x.rows)
        .map(|r| sq_dist(x.row(r), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.unit() * total;
            let mut acc = 0.0;
            let mut chosen = x.rows - 1;
            for (r, d) in closest.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = r;
                    break;
                }
            }
            chosen
        } else {
            rng.index(x.rows)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (r, best) in closest.iter_mut().enumerate() {
            let d = sq_dist(x.row(r), centroids.row(c));
            if d < *best {
                *best = d;
            }
        }
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations, then single-point
/// (Hartigan) moves until none lowers the inertia.
///
/// Stops once no centroid moves by `tol` or more (Euclidean) or after
/// `max_iter` updates. A cluster that ends an assignment step empty is
/// re-seeded at the point currently farthest from its own centroid.
pub fn kmeans_fit(x: &Matrix, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansModel> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if x.rows < k {
        return Err(Error::InsufficientData(format!(
            "k-means with k={k} needs at least {k} points, got {}",
            x.rows
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut centroids = plus_plus_init(x, k, &mut rng);
    let mut labels = vec![0usize; x.rows];
    let mut dists = vec![0.0; x.rows];
    let mut history = Vec::new();
    let mut iterations_run = 0;

    for _ in 0..max_iter {
        history.push(assign_all(&centroids, x, &mut labels, &mut dists));

        let mut sums = Matrix::zeros(k, x.cols);
        let mut counts = vec![0usize; k];
        for r in 0..x.rows {
            counts[labels[r]] += 1;
            for (s, v) in sums.row_mut(labels[r]).iter_mut().zip(x.row(r)) {
                *s += v;
            }
        }
        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                for (dst, s) in next.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / n;
                }
            }
        }
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let mut far = 0;
            for r in 1..x.rows {
                if dists[r] > dists[far] {
                    far = r;
                }
            }
            next.row_mut(c).copy_from_slice(x.row(far));
            dists[far] = 0.0;
        }

        let shift = (0..k)
            .map(|c| sq_dist(centroids.row(c), next.row(c)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        iterations_run += 1;
        if shift < tol {
            break;
        }
    }
    history.push(assign_all(&centroids, x, &mut labels, &mut dists));
    if hartigan_refine(x, &mut centroids, &mut labels, max_iter) {
        history.push(assign_all(&centroids, x, &mut labels, &mut dists));
    }
    let inertia = *history.last().unwrap_or(&0.0);
    Ok(KMeansModel {
        centroids,
        inertia,
        iterations_run,
        inertia_history: history,
    })
}

/// Single-point moves between clusters, taken whenever one lowers the
/// inertia of the partition with centroids at the cluster means. Returns
/// whether anything moved; `centroids` ends as the exact means.
fn hartigan_refine(x: &Matrix, centroids: &mut Matrix, labels: &mut [usize], max_passes: usize) -> bool {
    let k = centroids.rows;
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    let mut means = centroids.clone();
    recompute_means(x, labels, &counts, &mut means);
    let mut moved_any = false;
    for _ in 0..max_passes {
        let mut moved = false;
        for r in 0..x.rows {
            let a = labels[r];
            if counts[a] <= 1 {
                continue;
            }
            let na = counts[a] as f64;
            let remove = na / (na - 1.0) * sq_dist(x.row(r), means.row(a));
            let mut best = (a, remove);
            for c in (0..k).filter(|&c| c != a) {
                let nc = counts[c] as f64;
                let add = nc / (nc + 1.0) * sq_dist(x.row(r), means.row(c));
                if add < best.1 {
                    best = (c, add);
                }
            }
            let b = best.0;
            if b == a || best.1 >= remove * (1.0 - 1e-12) {
                continue;
            }
            let nb = counts[b] as f64;
            for (m, v) in means.row_mut(a).iter_mut().zip(x.row(r)) {
                *m = (*m * na - v) / (na - 1.0);
            }
            for (m, v) in means.row_mut(b).iter_mut().zip(x.row(r)) {
                *m = (*m * nb + v) / (nb + 1.0);
            }
            counts[a] -= 1;
            counts[b] += 1;
            labels[r] = b;
            moved = true;
        }
        if !moved {
            break;
        }
        moved_any = true;
    }
    if moved_any {
        recompute_means(x, labels, &counts, &mut means);
        *centroids = means;
    }
    moved_any
}

fn recompute_means(x: &Matrix, labels: &[usize], counts: &[usize], means: &mut Matrix) {
    let mut sums = Matrix::zeros(means.rows, x.cols);
    for r in 0..x.rows {
        for (s, v) in sums.row_mut(labels[r]).iter_mut().zip(x.row(r)) {
            *s += v;
        }
    }
    for c in (0..means.rows).filter(|&c| counts[c] > 0) {
        let n = counts[c] as f64;
        for (dst, s) in means.row_mut(c).iter_mut().zip(sums.row(c)) {
            *dst = s / n;
        }
    }
}

/// Nearest-centroid id for every row.
pub fn kmeans_assign(model: &KMeansModel, x: &Matrix) -> Result<Vec<usize>> {
    if x.cols != model.centroids.cols {
        return Err(Error::Shape(format!(
            "centroids have {} columns, points have {}",
            model.centroids.cols, x.cols
        )));
    }
    Ok((0..x.rows)
        .map(|r| nearest_centroid(&model.centroids, x.row(r)).0)
        .collect())
}
