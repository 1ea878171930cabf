// PCA and k-means on a cloud of noisy points around a few centers.

use jigsaw_seq::numerics::{kmeans_assign, kmeans_fit, pca_fit, pca_transform, Matrix};
use jigsaw_seq::rng::SeededRng;

pub fn run_example() -> anyhow::Result<()> {
    let mut rng = SeededRng::new(3);
    let centers: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..6).map(|_| rng.uniform(-5.0, 5.0)).collect())
        .collect();
    let rows: Vec<Vec<f64>> = (0..400)
        .map(|i| centers[i % 4].iter().map(|c| c + 0.3 * rng.normal()).collect())
        .collect();
    let x = Matrix::from_rows(&rows)?;

    let pca = pca_fit(&x, 3)?;
    println!("explained variance: {:.3?}", pca.explained_variance);
    let z = pca_transform(&pca, &x)?;

    let km = kmeans_fit(&z, 4, 11, 100, 1e-6)?;
    println!(
        "k-means: inertia {:.3} after {} iterations (history {:.2?})",
        km.inertia, km.iterations_run, km.inertia_history
    );
    let ids = kmeans_assign(&km, &z)?;
    let mut sizes = [0usize; 4];
    ids.iter().for_each(|&i| sizes[i] += 1);
    println!("cluster sizes: {sizes:?}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
