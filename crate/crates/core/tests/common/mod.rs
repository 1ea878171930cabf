#![allow(dead_code)]
// Independent oracles shared by the integration tests and the acceptance run.

use jigsaw_seq::numerics::{KMeansModel, Matrix};
use jigsaw_seq::puzzle::Image;
use jigsaw_seq::rng::SeededRng;
use jigsaw_seq::tokenizer::{Codebook, TokenizerConfig};

/// Cyclic Jacobi eigensolver: returns (eigenvalues, eigenvectors as columns).
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

pub fn random_matrix(rng: &mut SeededRng, n: usize, d: usize) -> Matrix {
    // correlated columns so the spectrum is spread out
    let mix: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            (0..d).map(|j| (0..d).map(|k| z[k] * mix[k][j]).sum::<f64>() + j as f64).collect()
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

/// Sample covariance with the `n - 1` denominator.
pub fn covariance(x: &Matrix) -> Vec<Vec<f64>> {
    let mean = x.column_means();
    let (n, d) = (x.rows, x.cols);
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| (0..n).map(|r| (x.get(r, i) - mean[i]) * (x.get(r, j) - mean[j])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect()
}

/// Inertia of a partition with each cluster at its mean.
pub fn partition_inertia(x: &Matrix, labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<usize> = (0..x.rows).filter(|&r| labels[r] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..x.cols)
            .map(|j| members.iter().map(|&r| x.get(r, j)).sum::<f64>() / members.len() as f64)
            .collect();
        total += members
            .iter()
            .map(|&r| x.row(r).iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>();
    }
    total
}

pub const K: usize = 144;

/// One grey channel, 1-px patches, and a centroid for every value the test
/// image uses: cell `c` of the piece at grid position `p` has id `16p + c`.
pub fn identity_codebook(clockwise: bool, lex_order: bool) -> Codebook {
    let centroids = Matrix::from_vec(K, 1, (0..K).map(|i| i as f64 / K as f64).collect()).unwrap();
    Codebook {
        config: TokenizerConfig {
            granularity: 4,
            vocab_size: K,
            use_pca: false,
            clockwise,
            lex_order,
            ..TokenizerConfig::default()
        },
        piece_side: 4,
        channels: 1,
        pca: None,
        kmeans: KMeansModel {
            centroids,
            inertia: 0.0,
            iterations_run: 0,
            inertia_history: vec![],
        },
        seed: 0,
        fit_patches: K,
        lineage: String::new(),
    }
}

pub fn cell_image() -> Image {
    let mut data = vec![0.0; 144];
    for y in 0..12 {
        for x in 0..12 {
            let p = (y / 4) * 3 + x / 4;
            let c = (y % 4) * 4 + x % 4;
            data[y * 12 + x] = (p * 16 + c) as f64 / K as f64;
        }
    }
    Image::new(12, 12, 1, data).unwrap()
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR")))
        .unwrap()
        .trim()
        .to_string()
}

