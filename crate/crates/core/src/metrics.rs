//! Clustering quality measures: silhouette coefficient, Calinski-Harabasz
//! index, and unsupervised accuracy under the best one-to-one relabeling.

use ndarray::{Array1, Array2, ArrayView2};
use pathfinding::prelude::{kuhn_munkres, Matrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Labeling;
use crate::error::{Error, Result};

/// Map arbitrary label values to `0..k` in order of first appearance.
fn densify(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let dense = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (dense, map.len())
}

fn check_partition(points: &ArrayView2<'_, f64>, labels: &[usize]) -> Result<(Vec<usize>, usize)> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} points",
            labels.len()
        )));
    }
    let (dense, k) = densify(labels);
    if k < 2 || k + 1 > n {
        return Err(Error::Config(format!(
            "need 2 ≤ clusters ≤ n − 1, got {k} clusters for {n} points"
        )));
    }
    Ok((dense, k))
}

fn distance(points: &ArrayView2<'_, f64>, a: usize, b: usize) -> f64 {
    points
        .row(a)
        .iter()
        .zip(points.row(b).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Per-sample silhouette values with Euclidean distance. Samples in
/// singleton clusters score 0.
pub fn silhouette_samples(points: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Vec<f64>> {
    let (labels, k) = check_partition(&points, labels)?;
    let n = points.nrows();
    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += distance(&points, i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect())
}

/// Mean silhouette coefficient.
pub fn silhouette(points: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let s = silhouette_samples(points, labels)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Calinski-Harabasz score; `f64::INFINITY` when every cluster has zero
/// within-cluster dispersion.
pub fn calinski_harabasz(points: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let (labels, k) = check_partition(&points, labels)?;
    let (n, d) = points.dim();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut sizes = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        let mut row = sums.row_mut(l);
        row += &points.row(i);
        sizes[l] += 1;
    }
    let overall: Array1<f64> = sums.sum_axis(ndarray::Axis(0)) / n as f64;
    let means = Array2::from_shape_fn((k, d), |(j, t)| sums[[j, t]] / sizes[j] as f64);

    let between: f64 = (0..k)
        .map(|j| {
            let d2: f64 = (0..d).map(|t| (means[[j, t]] - overall[t]).powi(2)).sum();
            sizes[j] as f64 * d2
        })
        .sum();
    let within: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            (0..d)
                .map(|t| (points[[i, t]] - means[[l, t]]).powi(2))
                .sum::<f64>()
        })
        .sum();
    if within < 1e-300 {
        return Ok(f64::INFINITY);
    }
    Ok(between / within * (n - k) as f64 / (k - 1) as f64)
}

/// Best accuracy over one-to-one mappings from clusters to classes, found
/// with the Kuhn-Munkres algorithm on the (square-padded) contingency table.
pub fn clustering_accuracy(truth: &[usize], clusters: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Config(
            "accuracy of an empty labeling is undefined".into(),
        ));
    }
    if truth.len() != clusters.len() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} cluster labels",
            truth.len(),
            clusters.len()
        )));
    }
    let (truth, n_classes) = densify(truth);
    let (clusters, n_clusters) = densify(clusters);
    let size = n_classes.max(n_clusters);
    let mut counts = Matrix::new(size, size, 0i64);
    for (&c, &y) in clusters.iter().zip(&truth) {
        counts[(c, y)] += 1;
    }
    let (matched, _) = kuhn_munkres(&counts);
    Ok(matched as f64 / truth.len() as f64)
}

/// Accuracy restricted to the samples `labels` knows about. `None` when
/// no sample is labeled.
pub fn labeled_accuracy(
    ids: &[String],
    clusters: &[usize],
    labels: &Labeling,
) -> Result<Option<f64>> {
    if ids.len() != clusters.len() {
        return Err(Error::Shape(format!(
            "{} ids vs {} cluster labels",
            ids.len(),
            clusters.len()
        )));
    }
    let (truth, found): (Vec<usize>, Vec<usize>) = ids
        .iter()
        .zip(clusters)
        .filter_map(|(id, &c)| labels.get(id).map(|y| (y, c)))
        .unzip();
    if truth.is_empty() {
        return Ok(None);
    }
    clustering_accuracy(&truth, &found).map(Some)
}

/// Which representation a set of internal metrics was computed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sc: f64,
    /// `None` when the index is infinite (see `chi_infinite`).
    pub chi: Option<f64>,
    pub chi_infinite: bool,
    pub acc_style: Option<f64>,
    pub acc_genre: Option<f64>,
    pub k: usize,
    pub n: usize,
    pub space_tag: String,
    pub space_dim: usize,
}

/// Silhouette and Calinski-Harabasz of `labels` in `points`; accuracies are
/// filled in by the caller when ground truth exists.
pub fn evaluate(
    points: ArrayView2<'_, f64>,
    labels: &[usize],
    space_tag: &str,
) -> Result<EvalReport> {
    let sc = silhouette(points, labels)?;
    let chi = calinski_harabasz(points, labels)?;
    Ok(EvalReport {
        sc,
        chi: chi.is_finite().then_some(chi),
        chi_infinite: !chi.is_finite(),
        acc_style: None,
        acc_genre: None,
        k: densify(labels).1,
        n: points.nrows(),
        space_tag: space_tag.to_string(),
        space_dim: points.ncols(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn coincident_separated_clusters_score_one() {
        let pts = array![[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0]];
        assert_eq!(silhouette(pts.view(), &[0, 0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn silhouette_hand_example_with_singleton() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.5, 10.0]];
        let s = silhouette_samples(pts.view(), &[0, 0, 1]).unwrap();
        let b = (0.25f64 + 100.0).sqrt();
        assert!((s[0] - (b - 1.0) / b).abs() < 1e-15);
        assert!((s[1] - (b - 1.0) / b).abs() < 1e-15);
        assert_eq!(s[2], 0.0);
        let mean = silhouette(pts.view(), &[0, 0, 1]).unwrap();
        assert!((mean - 2.0 * (b - 1.0) / b / 3.0).abs() < 1e-15);
    }

    #[test]
    fn silhouette_rejects_bad_cluster_counts() {
        let pts = array![[0.0], [1.0], [2.0]];
        assert!(matches!(
            silhouette(pts.view(), &[0, 0, 0]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            silhouette(pts.view(), &[0, 1, 2]),
            Err(Error::Config(_))
        ));
        assert!(calinski_harabasz(pts.view(), &[4, 4, 4]).is_err());
    }

    #[test]
    fn chi_hand_example_and_invariances() {
        let pts = array![[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0]];
        let labels = [0, 0, 1, 1];
        assert!((calinski_harabasz(pts.view(), &labels).unwrap() - 50.0).abs() < 1e-12);
        let shifted = &pts + &array![5.0, -3.0];
        assert!((calinski_harabasz(shifted.view(), &labels).unwrap() - 50.0).abs() < 1e-12);
        let scaled = &pts * 3.7;
        assert!((calinski_harabasz(scaled.view(), &labels).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn chi_collapsed_clusters_are_infinite() {
        let pts = array![[0.0], [0.0], [3.0], [3.0]];
        let chi = calinski_harabasz(pts.view(), &[0, 0, 1, 1]).unwrap();
        assert!(chi.is_infinite());
        let report = evaluate(pts.view(), &[0, 0, 1, 1], "raw").unwrap();
        assert!(report.chi_infinite && report.chi.is_none());
        assert!(serde_json::to_string(&report)
            .unwrap()
            .contains("\"chi\":null"));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(
            clustering_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(),
            1.0
        );
        assert_eq!(
            clustering_accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(),
            0.5
        );
        assert!(clustering_accuracy(&[], &[]).is_err());
        assert!(clustering_accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn accuracy_with_more_clusters_than_classes() {
        // clusters 0,1 both hold class 0; only one of them may map to it
        let acc = clustering_accuracy(&[0, 0, 0, 1, 1], &[0, 0, 1, 2, 2]).unwrap();
        assert!((acc - 4.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn labeled_accuracy_skips_unlabeled() {
        let ids: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let labels = Labeling::from_indices(&ids[..3], &[0, 0, 1]);
        let acc = labeled_accuracy(&ids, &[2, 2, 5, 2], &labels).unwrap();
        assert_eq!(acc, Some(1.0));
        let none = Labeling::from_indices(&[], &[]);
        assert_eq!(labeled_accuracy(&ids, &[0, 0, 1, 1], &none).unwrap(), None);
    }

    #[test]
    fn report_records_space() {
        let pts = array![[0.0, 0.0], [0.0, 1.0], [4.0, 0.0], [4.0, 1.0]];
        let r = evaluate(pts.view(), &[3, 3, 7, 7], "embedded").unwrap();
        assert_eq!((r.k, r.n, r.space_dim), (2, 4, 2));
        assert_eq!(r.space_tag, "embedded");
        assert!(r.sc > 0.0 && r.sc <= 1.0);
    }
}
