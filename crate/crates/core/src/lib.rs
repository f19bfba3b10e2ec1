//! K-means prototype extraction feeding a least-squares kernel classifier.
//!
//! Per class, a spherical (cosine) K-means reduces the training samples to
//! `Q` unit-norm centroids. The pooled `K * Q` centroids, tagged with their
//! class, become the training set of a least-squares SVM: one bordered
//! linear system over the kernel matrix gives the weights and biases.
//! Whole-image, spectrum-augmented and patch-voting feature regimes are
//! provided for IDX (MNIST-format) data.

pub mod error;
pub mod experiment;
pub mod features;
pub mod kmeans;
pub mod lssvm;
pub mod mnist_io;
pub mod numeric;
pub mod patch;
pub mod persist;
pub mod pipeline;

pub use error::{Error, Result};
pub use numeric::Matrix;
