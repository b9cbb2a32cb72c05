//! Dense linear algebra, seeded randomness and PCA shared by the rest of the crate.

mod matrix;
mod pca;
mod rng;

pub use matrix::{matmul, Matrix};
pub(crate) use matrix::squared_distance;
pub use pca::{apply_pca, fit_pca, PcaTransform};
pub use rng::Rng;
