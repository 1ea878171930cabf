//! Dense linear algebra, PCA and k-means, all in 64-bit floats.

mod kmeans;
mod matrix;
mod pca;

pub use kmeans::{kmeans_assign, kmeans_fit, nearest_centroid, KMeansModel};
pub use matrix::Matrix;
pub(crate) use matrix::gemm_acc;
pub use pca::{pca_fit, pca_inverse, pca_transform, PcaModel, ScatterAccumulator};
