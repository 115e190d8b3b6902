//! Deep embedded clustering: Student-t soft assignments against learnable
//! centroids, a sharpened self-training target, and joint refinement of the
//! encoder and centroids by minimizing KL(P ‖ Q).

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::autoencoder::encode;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_fit, KmeansConfig, KmeansResult};
use crate::neural::{Adam, AdamConfig, Mlp};
use crate::rng::Rng;

/// Centroid pairs closer than this make the soft assignment degenerate.
pub const MIN_CENTROID_DISTANCE: f64 = 1e-12;

fn check_shapes(z: &ArrayView2<'_, f64>, mu: &ArrayView2<'_, f64>) -> Result<()> {
    if z.ncols() != mu.ncols() {
        return Err(Error::Shape(format!(
            "embeddings have {} dims, centroids {}",
            z.ncols(),
            mu.ncols()
        )));
    }
    if mu.nrows() == 0 {
        return Err(Error::Config("no centroids".into()));
    }
    Ok(())
}

fn check_distinct(mu: &ArrayView2<'_, f64>) -> Result<()> {
    for a in 0..mu.nrows() {
        for b in a + 1..mu.nrows() {
            let d2: f64 = mu
                .row(a)
                .iter()
                .zip(mu.row(b).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            if d2.sqrt() < MIN_CENTROID_DISTANCE {
                return Err(Error::DegenerateCentroids(format!(
                    "centroids {a} and {b} coincide"
                )));
            }
        }
    }
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("centroids contain non-finite values".into()));
    }
    Ok(())
}

/// Student-t kernel values `(1 + ‖z_i − μ_j‖²)⁻¹`, unnormalized.
fn kernel(z: &ArrayView2<'_, f64>, mu: &ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((z.nrows(), mu.nrows()));
    for (i, zi) in z.rows().into_iter().enumerate() {
        for (j, mj) in mu.rows().into_iter().enumerate() {
            let d2: f64 = zi
                .iter()
                .zip(mj.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out[[i, j]] = 1.0 / (1.0 + d2);
        }
    }
    out
}

fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let s = row.sum();
        row /= s;
    }
}

/// Soft assignment of each embedded point to each centroid.
pub fn soft_assign(z: ArrayView2<'_, f64>, mu: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_shapes(&z, &mu)?;
    check_distinct(&mu)?;
    let mut q = kernel(&z, &mu);
    normalize_rows(&mut q);
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "soft assignment produced non-finite values".into(),
        ));
    }
    Ok(q)
}

/// Target distribution: squares of `q` divided by soft cluster frequency,
/// renormalized per row.
pub fn target_distribution(q: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let freq = q.sum_axis(Axis(0));
    if let Some(j) = freq.iter().position(|&f| f < 1e-300) {
        return Err(Error::DegenerateCentroids(format!(
            "cluster {j} has zero soft frequency"
        )));
    }
    let mut p = Array2::from_shape_fn(q.dim(), |(i, j)| q[[i, j]] * q[[i, j]] / freq[j]);
    normalize_rows(&mut p);
    Ok(p)
}

/// KL(P ‖ Q) summed over all rows, with `0 · log(0 / q) = 0`.
pub fn kl_loss(p: ArrayView2<'_, f64>, q: ArrayView2<'_, f64>) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Shape(format!(
            "P is {:?}, Q is {:?}",
            p.dim(),
            q.dim()
        )));
    }
    let mut total = 0.0;
    for ((i, j), &pij) in p.indexed_iter() {
        if pij == 0.0 {
            continue;
        }
        let qij = q[[i, j]];
        if qij <= 0.0 {
            return Err(Error::Numeric(format!("q[{i},{j}] = {qij} where p > 0")));
        }
        total += pij * (pij / qij).ln();
    }
    Ok(total)
}

/// Gradients of `kl_loss(p, soft_assign(z, mu))` with respect to `z` and
/// `mu`, holding `p` fixed.
pub fn kl_grads(
    z: ArrayView2<'_, f64>,
    mu: ArrayView2<'_, f64>,
    p: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_shapes(&z, &mu)?;
    check_distinct(&mu)?;
    if p.dim() != (z.nrows(), mu.nrows()) {
        return Err(Error::Shape(format!(
            "target is {:?}, expected ({}, {})",
            p.dim(),
            z.nrows(),
            mu.nrows()
        )));
    }
    let kern = kernel(&z, &mu);
    let mut q = kern.clone();
    normalize_rows(&mut q);
    let mut grad_z = Array2::zeros(z.dim());
    let mut grad_mu = Array2::zeros(mu.dim());
    for i in 0..z.nrows() {
        for j in 0..mu.nrows() {
            let coef = 2.0 * kern[[i, j]] * (p[[i, j]] - q[[i, j]]);
            if coef == 0.0 {
                continue;
            }
            for t in 0..z.ncols() {
                let diff = z[[i, t]] - mu[[j, t]];
                grad_z[[i, t]] += coef * diff;
                grad_mu[[j, t]] -= coef * diff;
            }
        }
    }
    Ok((grad_z, grad_mu))
}

/// Row-wise argmax; ties go to the lowest index.
pub fn hard_labels(q: ArrayView2<'_, f64>) -> Vec<usize> {
    q.rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (j, &v)| {
                    if v > bv {
                        (j, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecConfig {
    pub k: usize,
    /// Minibatch steps between full-data target refreshes.
    pub update_interval: usize,
    /// Stop when fewer than this fraction of labels changed since the last
    /// refresh.
    pub delta: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub max_iterations: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
}

impl DecConfig {
    pub fn new(k: usize) -> Self {
        let km = KmeansConfig::new(k);
        Self {
            k,
            update_interval: 140,
            delta: 0.001,
            batch_size: 256,
            adam: AdamConfig::default(),
            max_iterations: 20_000,
            kmeans_restarts: km.restarts,
            kmeans_max_iters: km.max_iters,
            kmeans_tol: km.tol,
        }
    }

    pub fn kmeans(&self) -> KmeansConfig {
        KmeansConfig {
            k: self.k,
            restarts: self.kmeans_restarts,
            max_iters: self.kmeans_max_iters,
            tol: self.kmeans_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!(
                "deep clustering needs k ≥ 2, got {}",
                self.k
            )));
        }
        if self.update_interval == 0 {
            return Err(Error::Config("update interval must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!(
                "delta must be in (0, 1], got {}",
                self.delta
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.adam.validate()
    }
}

/// Soft and target assignments as of the most recent refresh.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentState {
    pub q: Array2<f64>,
    pub p: Array2<f64>,
    pub hard: Vec<usize>,
    pub last_hard: Vec<usize>,
    pub iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshRecord {
    pub refresh_index: usize,
    pub iter: usize,
    /// KL(P ‖ Q) over all samples with the freshly computed target.
    pub kl_full: f64,
    /// KL of the previous target against the current Q: the objective the
    /// preceding interval optimized, evaluated at its end.
    pub kl_previous_target: Option<f64>,
    /// Fraction of samples whose label changed since the previous refresh;
    /// absent on the first refresh.
    pub changed_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecHistory {
    pub refreshes: Vec<RefreshRecord>,
    pub converged: bool,
    pub iterations: usize,
    pub max_iterations: usize,
}

impl DecHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("refresh_index,iter,kl_full,changed_fraction\n");
        for r in &self.refreshes {
            let changed = r
                .changed_fraction
                .map(|c| c.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.refresh_index, r.iter, r.kl_full, changed
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// For each interval between consecutive refreshes: the frozen-target
    /// objective at its start and at its end.
    pub fn frozen_target_pairs(&self) -> Vec<(f64, f64)> {
        self.refreshes
            .windows(2)
            .filter_map(|w| w[1].kl_previous_target.map(|end| (w[0].kl_full, end)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DecFit {
    pub encoder: Mlp,
    pub centroids: Array2<f64>,
    pub state: AssignmentState,
    pub history: DecHistory,
    /// The k-means run that initialized the centroids.
    pub init: KmeansResult,
    /// Embeddings of all samples at the final refresh.
    pub embedded: Array2<f64>,
}

impl DecFit {
    pub fn converged(&self) -> bool {
        self.history.converged
    }
}

/// Embed with the pretrained encoder and run k-means in the latent space.
/// The AE+k-means baseline and the clustering initialization share this.
pub fn initial_clustering(
    encoder: &Mlp,
    features: ArrayView2<'_, f64>,
    cfg: &KmeansConfig,
    rng: &mut Rng,
) -> Result<(Array2<f64>, KmeansResult)> {
    let z = encode(encoder, features)?;
    let km = kmeans_fit(z.view(), cfg, rng)?;
    Ok((z, km))
}

/// Jointly refine the encoder and centroids.
///
/// Every `update_interval` minibatch steps, all samples are re-embedded and
/// Q and P are recomputed; training stops once the fraction of changed hard
/// labels between consecutive refreshes drops below `delta`, or when
/// `max_iterations` steps have run. Between refreshes each minibatch takes
/// one Adam step on the encoder and one on the centroids (separate moment
/// buffers, same settings), using the batch-mean KL gradient with P held
/// fixed.
pub fn dec_fit(
    features: ArrayView2<'_, f64>,
    encoder: &Mlp,
    config: &DecConfig,
    rng: &mut Rng,
) -> Result<DecFit> {
    config.validate()?;
    let n = features.nrows();
    if features.ncols() != encoder.input_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, encoder expects {}",
            features.ncols(),
            encoder.input_dim()
        )));
    }
    if n <= config.k {
        return Err(Error::Config(format!(
            "k = {} needs more than {n} samples",
            config.k
        )));
    }

    let (_, init) = initial_clustering(encoder, features, &config.kmeans(), rng)?;
    let mut encoder = encoder.clone();
    let mut mu = init.centroids.clone();
    check_distinct(&mu.view())?;

    let mut enc_opt = Adam::for_network(config.adam, &encoder);
    let mut mu_opt = Adam::new(config.adam, [mu.len()]);
    let enc_names = encoder.block_names();
    let mu_names = vec!["centroids".to_string()];

    let mut refreshes: Vec<RefreshRecord> = Vec::new();
    let mut p = Array2::zeros((n, config.k));
    let mut q;
    let mut hard: Vec<usize>;
    let mut last_hard: Vec<usize> = Vec::new();
    let mut z;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut iter = 0;
    let mut converged = false;

    loop {
        if iter % config.update_interval == 0 || iter == config.max_iterations {
            z = encode(&encoder, features)?;
            q = soft_assign(z.view(), mu.view())?;
            let kl_previous_target = if refreshes.is_empty() {
                None
            } else {
                Some(kl_loss(p.view(), q.view())?)
            };
            p = target_distribution(q.view())?;
            hard = hard_labels(q.view());
            let changed_fraction = if refreshes.is_empty() {
                None
            } else {
                Some(changed_fraction(&hard, &last_hard))
            };
            let kl_full = kl_loss(p.view(), q.view())?;
            refreshes.push(RefreshRecord {
                refresh_index: refreshes.len(),
                iter,
                kl_full,
                kl_previous_target,
                changed_fraction,
            });
            let previous = std::mem::replace(&mut last_hard, hard.clone());
            if changed_fraction.is_some_and(|c| c < config.delta) {
                converged = true;
            }
            if converged || iter >= config.max_iterations {
                let state = AssignmentState {
                    q,
                    p,
                    hard,
                    last_hard: if previous.is_empty() {
                        last_hard.clone()
                    } else {
                        previous
                    },
                    iter,
                };
                return Ok(DecFit {
                    encoder,
                    centroids: mu,
                    state,
                    history: DecHistory {
                        refreshes,
                        converged,
                        iterations: iter,
                        max_iterations: config.max_iterations,
                    },
                    init,
                    embedded: z,
                });
            }
        }

        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(n) {
            if cursor == order.len() {
                order = rng.permutation(n);
                cursor = 0;
            }
            let take = (config.batch_size.min(n) - batch.len()).min(order.len() - cursor);
            batch.extend_from_slice(&order[cursor..cursor + take]);
            cursor += take;
        }

        let x = features.select(Axis(0), &batch);
        let p_batch = p.select(Axis(0), &batch);
        let trace = encoder.forward(x.view())?;
        let (mut grad_z, mut grad_mu) = kl_grads(trace.output().view(), mu.view(), p_batch.view())?;
        let scale = 1.0 / batch.len() as f64;
        grad_z *= scale;
        grad_mu *= scale;
        let enc_grads = encoder.backward(&trace, grad_z.view())?;
        enc_opt.step(&mut encoder.blocks_mut(), &enc_grads.blocks(), &enc_names)?;
        mu_opt.step(
            &mut [mu.as_slice_mut().expect("standard layout")],
            &[grad_mu.as_slice().expect("standard layout")],
            &mu_names,
        )?;
        iter += 1;
    }
}

/// Fraction of samples whose label differs between two labelings.
pub fn changed_fraction(a: &[usize], b: &[usize]) -> f64 {
    let changed = a.iter().zip(b).filter(|(x, y)| x != y).count();
    changed as f64 / a.len().max(1) as f64
}

/// Cluster sizes for `k` clusters.
pub fn cluster_sizes(labels: &[usize], k: usize) -> Array1<usize> {
    let mut sizes = Array1::zeros(k);
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}
