//! Seeded synthetic datasets with known generative labels.

use ndarray::{Array1, Array2};

use crate::dataio::FeatureMatrix;
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct LabeledData {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct BlobSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Distance between any two cluster centers.
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Isotropic Gaussian blobs around mutually orthogonal centers
/// `(separation / √2) · e_j`, so every pair of centers is `separation`
/// apart. Sample `i` belongs to cluster `i mod k`.
pub fn gaussian_blobs(spec: &BlobSpec) -> LabeledData {
    assert!(
        spec.k >= 1 && spec.d >= spec.k,
        "need d ≥ k for orthogonal centers"
    );
    let mut rng = Rng::new(spec.seed);
    let scale = spec.separation / std::f64::consts::SQRT_2;
    let labels: Vec<usize> = (0..spec.n).map(|i| i % spec.k).collect();
    let mut x = Array2::zeros((spec.n, spec.d));
    for (i, &label) in labels.iter().enumerate() {
        for j in 0..spec.d {
            x[[i, j]] = rng.normal(0.0, spec.sigma);
        }
        x[[i, label]] += scale;
    }
    LabeledData {
        features: FeatureMatrix::from_values(x).expect("finite synthetic data"),
        labels,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ManifoldSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for ManifoldSpec {
    fn default() -> Self {
        Self {
            n: 800,
            d: 32,
            k: 8,
            seed: 2024,
        }
    }
}

/// `k` elongated clusters strung along a closed curve in 3-d, pushed
/// through a fixed random `tanh` map into `d` dimensions.
///
/// Each cluster is stretched along the curve tangent far enough that
/// neighbours overlap, and has a different thickness across it.
pub fn manifold_clusters(spec: &ManifoldSpec) -> LabeledData {
    let mut rng = Rng::new(spec.seed);
    let k = spec.k as f64;
    let curve = |t: f64| [2.0 * t.cos(), 2.0 * t.sin(), (3.0 * t).sin()];

    let mixing = Array2::from_shape_simple_fn((spec.d, 3), || rng.normal(0.0, 0.6));
    let offset = Array1::from_shape_simple_fn(spec.d, || rng.normal(0.0, 0.2));
    let thickness: Vec<f64> = (0..spec.k).map(|_| 0.05 + 0.15 * rng.uniform()).collect();
    let along = 0.35 * std::f64::consts::TAU / k;

    let labels: Vec<usize> = (0..spec.n).map(|i| i % spec.k).collect();
    let mut x = Array2::zeros((spec.n, spec.d));
    for (i, &label) in labels.iter().enumerate() {
        let t0 = std::f64::consts::TAU * label as f64 / k;
        let t = t0 + rng.normal(0.0, along);
        let mut u = curve(t);
        for c in u.iter_mut() {
            *c += rng.normal(0.0, thickness[label]);
        }
        for j in 0..spec.d {
            let lin =
                mixing[[j, 0]] * u[0] + mixing[[j, 1]] * u[1] + mixing[[j, 2]] * u[2] + offset[j];
            x[[i, j]] = lin.tanh() + rng.normal(0.0, 0.02);
        }
    }
    LabeledData {
        features: FeatureMatrix::from_values(x).expect("finite synthetic data"),
        labels,
    }
}
