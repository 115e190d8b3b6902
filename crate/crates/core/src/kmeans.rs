//! Lloyd's k-means with k-means++ seeding and best-of-N restarts.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl KmeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            restarts: 20,
            max_iters: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansResult {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub restarts_run: usize,
    pub best_restart_index: usize,
    /// Lloyd iterations used by the winning restart.
    pub iterations: usize,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
    pub config: KmeansConfig,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid. Ties go to the
/// lowest index.
fn nearest(point: ArrayView1<'_, f64>, centroids: &ArrayView2<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Nearest-centroid label for every point.
pub fn assign(points: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    if points.ncols() != centroids.ncols() {
        return Err(Error::Shape(format!(
            "points have {} columns, centroids {}",
            points.ncols(),
            centroids.ncols()
        )));
    }
    if centroids.nrows() == 0 {
        return Err(Error::Config("no centroids".into()));
    }
    Ok(points
        .rows()
        .into_iter()
        .map(|p| nearest(p, &centroids).0)
        .collect())
}

pub fn inertia(
    points: ArrayView2<'_, f64>,
    centroids: ArrayView2<'_, f64>,
    labels: &[usize],
) -> f64 {
    points
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, centroids.row(l)))
        .sum()
}

fn kmeans_pp(points: &ArrayView2<'_, f64>, k: usize, rng: &mut Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    centroids.row_mut(0).assign(&points.row(rng.below(n)));
    let mut d2: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| sq_dist(p, centroids.row(0)))
        .collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        centroids.row_mut(j).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.row(j)));
        }
    }
    centroids
}

/// Centroid update. An empty cluster takes over the point farthest from its
/// current centroid (drawn from clusters with at least two members).
fn update_centroids(
    points: &ArrayView2<'_, f64>,
    labels: &mut [usize],
    old: &Array2<f64>,
) -> Array2<f64> {
    let k = old.nrows();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    let mut taken = vec![false; labels.len()];
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let far = (0..labels.len())
            .filter(|&i| !taken[i] && counts[labels[i]] > 1)
            .map(|i| (i, sq_dist(points.row(i), old.row(labels[i]))))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        if let Some((i, _)) = far {
            counts[labels[i]] -= 1;
            labels[i] = j;
            counts[j] = 1;
            taken[i] = true;
        }
    }
    let mut sums = Array2::zeros(old.dim());
    for (p, &l) in points.rows().into_iter().zip(labels.iter()) {
        let mut row = sums.row_mut(l);
        row += &p;
    }
    for (j, &count) in counts.iter().enumerate().take(k) {
        if count > 0 {
            let mut row = sums.row_mut(j);
            row /= count as f64;
        } else {
            sums.row_mut(j).assign(&old.row(j));
        }
    }
    sums
}

struct RestartOutcome {
    centroids: Array2<f64>,
    labels: Vec<usize>,
    inertia: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn lloyd(points: &ArrayView2<'_, f64>, cfg: &KmeansConfig, rng: &mut Rng) -> RestartOutcome {
    let mut centroids = kmeans_pp(points, cfg.k, rng);
    let mut history = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    let mut iterations = 0;
    let mut at_fixpoint = false;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let mut labels = assign(points.view(), centroids.view()).expect("shapes fixed");
        history.push(inertia(points.view(), centroids.view(), &labels));
        if prev.as_ref() == Some(&labels) {
            at_fixpoint = true;
            break;
        }
        let next = update_centroids(points, &mut labels, &centroids);
        let shift = next
            .rows()
            .into_iter()
            .zip(centroids.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        prev = Some(labels);
        if shift < cfg.tol {
            break;
        }
    }
    let labels = assign(points.view(), centroids.view()).expect("shapes fixed");
    let final_inertia = inertia(points.view(), centroids.view(), &labels);
    if !at_fixpoint {
        history.push(final_inertia);
    }
    RestartOutcome {
        centroids,
        labels,
        inertia: final_inertia,
        iterations,
        history,
    }
}

/// Best-inertia clustering over `cfg.restarts` independent runs. Each
/// restart's seed is drawn from `rng` before any run starts, so the result
/// does not depend on how restarts are scheduled across threads.
pub fn kmeans_fit(
    points: ArrayView2<'_, f64>,
    cfg: &KmeansConfig,
    rng: &mut Rng,
) -> Result<KmeansResult> {
    let n = points.nrows();
    if cfg.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if cfg.k > n {
        return Err(Error::Config(format!(
            "k = {} exceeds the {n} points",
            cfg.k
        )));
    }
    if cfg.restarts == 0 || cfg.max_iters == 0 {
        return Err(Error::Config(
            "k-means needs at least one restart and one iteration".into(),
        ));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(
            "k-means input contains non-finite values".into(),
        ));
    }
    let seeds: Vec<u64> = (0..cfg.restarts).map(|_| rng.fork().seed()).collect();
    let outcomes: Vec<RestartOutcome> = seeds
        .par_iter()
        .map(|&seed| lloyd(&points, cfg, &mut Rng::new(seed)))
        .collect();
    let (best_index, _) =
        outcomes
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, o)| {
                if o.inertia < bv {
                    (i, o.inertia)
                } else {
                    (bi, bv)
                }
            });
    let best = outcomes.into_iter().nth(best_index).unwrap();
    Ok(KmeansResult {
        centroids: best.centroids,
        labels: best.labels,
        inertia: best.inertia,
        restarts_run: cfg.restarts,
        best_restart_index: best_index,
        iterations: best.iterations,
        inertia_history: best.history,
        config: *cfg,
    })
}
