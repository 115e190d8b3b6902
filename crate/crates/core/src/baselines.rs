//! Comparison strategies: k-means on PCA-reduced inputs and k-means on the
//! pretrained autoencoder's latent space.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dec::initial_clustering;
use crate::error::Result;
use crate::kmeans::{kmeans_fit, KmeansConfig, KmeansResult};
use crate::metrics::{evaluate, EvalReport};
use crate::neural::Mlp;
use crate::projection::pca_fit;
use crate::rng::Rng;

/// Default number of principal components for the PCA baseline.
pub const DEFAULT_PCA_COMPONENTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    PcaKmeans,
    AeKmeans,
}

impl Strategy {
    pub fn space_tag(self) -> &'static str {
        match self {
            Strategy::PcaKmeans => "pca",
            Strategy::AeKmeans => "ae_embedded",
        }
    }
}

/// Serializes as the evaluation report plus `strategy`, `seed` and the
/// k-means settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineRun {
    pub strategy: Strategy,
    #[serde(skip)]
    pub k: usize,
    pub seed: u64,
    #[serde(skip)]
    pub reduced_dim: usize,
    pub kmeans: KmeansConfig,
    #[serde(flatten)]
    pub report: EvalReport,
    #[serde(skip)]
    pub labels: Vec<usize>,
    #[serde(skip)]
    pub reduced: Array2<f64>,
}

fn finish(
    strategy: Strategy,
    seed: u64,
    reduced: Array2<f64>,
    km: KmeansResult,
) -> Result<BaselineRun> {
    let report = evaluate(reduced.view(), &km.labels, strategy.space_tag())?;
    Ok(BaselineRun {
        strategy,
        k: km.config.k,
        seed,
        reduced_dim: reduced.ncols(),
        kmeans: km.config,
        report,
        labels: km.labels,
        reduced,
    })
}

/// PCA to `r` components, then k-means with restarts; metrics in the
/// reduced space.
pub fn run_pca_kmeans(
    features: ArrayView2<'_, f64>,
    k: usize,
    r: usize,
    seed: u64,
) -> Result<BaselineRun> {
    run_pca_kmeans_with(features, &KmeansConfig::new(k), r, seed)
}

pub fn run_pca_kmeans_with(
    features: ArrayView2<'_, f64>,
    cfg: &KmeansConfig,
    r: usize,
    seed: u64,
) -> Result<BaselineRun> {
    let model = pca_fit(features, r)?;
    let reduced = model.transform(features)?;
    let km = kmeans_fit(reduced.view(), cfg, &mut Rng::new(seed))?;
    finish(Strategy::PcaKmeans, seed, reduced, km)
}

/// k-means on the pretrained encoder's embeddings. Identical to the
/// centroid initialization of the deep clustering phase for the same seed.
pub fn run_ae_kmeans(
    features: ArrayView2<'_, f64>,
    encoder: &Mlp,
    k: usize,
    seed: u64,
) -> Result<BaselineRun> {
    run_ae_kmeans_with(features, encoder, &KmeansConfig::new(k), seed)
}

pub fn run_ae_kmeans_with(
    features: ArrayView2<'_, f64>,
    encoder: &Mlp,
    cfg: &KmeansConfig,
    seed: u64,
) -> Result<BaselineRun> {
    let (z, km) = initial_clustering(encoder, features, cfg, &mut Rng::new(seed))?;
    finish(Strategy::AeKmeans, seed, z, km)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmeans::kmeans_fit;
    use crate::metrics::clustering_accuracy;
    use crate::synthetic::{gaussian_blobs, BlobSpec};
    use ndarray::{Array2, Axis};

    fn blobs() -> crate::synthetic::LabeledData {
        gaussian_blobs(&BlobSpec {
            n: 150,
            d: 12,
            k: 3,
            separation: 10.0,
            sigma: 1.0,
            seed: 4,
        })
    }

    #[test]
    fn pca_kmeans_recovers_blobs() {
        let data = blobs();
        let run = run_pca_kmeans(data.features.values(), 3, 2, 7).unwrap();
        assert_eq!(clustering_accuracy(&data.labels, &run.labels).unwrap(), 1.0);
        assert_eq!(run.reduced_dim, 2);
        assert_eq!(run.report.space_tag, "pca");
        assert_eq!((run.k, run.seed), (3, 7));
    }

    #[test]
    fn full_rank_pca_matches_centered_kmeans() {
        let data = blobs();
        let x = data.features.values();
        let run = run_pca_kmeans(x, 3, 12, 5).unwrap();
        let centered: Array2<f64> = &x - &x.mean_axis(Axis(0)).unwrap();
        let direct = kmeans_fit(centered.view(), &KmeansConfig::new(3), &mut Rng::new(5)).unwrap();
        assert_eq!(run.labels, direct.labels);
    }

    #[test]
    fn report_json_carries_strategy_and_seed() {
        let data = blobs();
        let run = run_pca_kmeans(data.features.values(), 3, 2, 9).unwrap();
        let v: serde_json::Value = serde_json::to_value(&run).unwrap();
        assert_eq!(v["strategy"], "pca_kmeans");
        assert_eq!(v["seed"], 9);
        assert_eq!(v["k"], 3);
        assert_eq!(v["space_dim"], 2);
        assert_eq!(v["space_tag"], "pca");
    }

    #[test]
    fn pca_kmeans_is_deterministic() {
        let data = blobs();
        let a = run_pca_kmeans(data.features.values(), 4, 3, 1).unwrap();
        let b = run_pca_kmeans(data.features.values(), 4, 3, 1).unwrap();
        assert_eq!(a, b);
    }
}
