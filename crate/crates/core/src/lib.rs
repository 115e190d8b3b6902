//! Deep embedded clustering for high-dimensional feature vectors.
//!
//! A stacked autoencoder is pretrained on reconstruction, its encoder is
//! seeded with k-means centroids, and encoder plus centroids are then
//! refined jointly by minimizing KL(P || Q) between Student-t soft
//! assignments Q and a sharpened target P.

pub mod autoencoder;
pub mod baselines;
pub mod checkpoint;
pub mod dataio;
pub mod dec;
pub mod error;
pub mod kmeans;
pub mod metrics;
pub mod neural;
pub mod plot;
pub mod projection;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
pub use rng::Rng;
