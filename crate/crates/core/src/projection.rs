//! Linear and nonlinear projections: PCA for the baseline front-end and
//! exact (O(n²)) t-SNE for 2-d visualization.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `r × d`, orthonormal rows.
    pub components: Array2<f64>,
    /// Variance along each component, descending.
    pub explained_variance: Array1<f64>,
    /// Total variance of the training data (sum over all directions).
    pub total_variance: f64,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn explained_variance_ratio(&self) -> Array1<f64> {
        if self.total_variance > 0.0 {
            &self.explained_variance / self.total_variance
        } else {
            Array1::zeros(self.explained_variance.len())
        }
    }

    /// `(x − mean) · componentsᵀ`
    pub fn transform(&self, points: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if points.ncols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "points have {} columns, model was fit on {}",
                points.ncols(),
                self.mean.len()
            )));
        }
        Ok((&points - &self.mean).dot(&self.components.t()))
    }

    pub fn inverse_transform(&self, reduced: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if reduced.ncols() != self.n_components() {
            return Err(Error::Shape(format!(
                "reduced points have {} columns, model has {} components",
                reduced.ncols(),
                self.n_components()
            )));
        }
        Ok(reduced.dot(&self.components) + &self.mean)
    }
}

/// Top-`r` principal directions of the centered data, from a thin SVD.
/// Each component's largest-magnitude coordinate is made positive.
pub fn pca_fit(points: ArrayView2<'_, f64>, r: usize) -> Result<PcaModel> {
    let (n, d) = points.dim();
    if n < 2 || r == 0 || r > (n - 1).min(d) {
        return Err(Error::Config(format!(
            "component count {r} outside [1, min(n − 1, d)] for {n}×{d} data"
        )));
    }
    let mean = points.mean_axis(Axis(0)).expect("n ≥ 2");
    let centered = &points - &mean;
    let total_variance = centered.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;

    let m = DMatrix::from_row_iterator(n, d, centered.iter().copied());
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut components = Array2::zeros((r, d));
    let mut explained = Array1::zeros(r);
    for (c, &src) in order.iter().take(r).enumerate() {
        let row = v_t.row(src);
        let pivot = (0..d).fold(0, |best, t| {
            if row[t].abs() > row[best].abs() {
                t
            } else {
                best
            }
        });
        let sign = if row[pivot] < 0.0 { -1.0 } else { 1.0 };
        for t in 0..d {
            components[[c, t]] = sign * row[t];
        }
        explained[c] = svd.singular_values[src].powi(2) / (n - 1) as f64;
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: explained,
        total_variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and the initial momentum.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 5 {
            return Err(Error::Config(format!(
                "t-SNE needs at least 5 points, got {n}"
            )));
        }
        let upper = (n as f64 - 1.0) / 3.0;
        if !(self.perplexity > 1.0 && self.perplexity < upper) {
            return Err(Error::Config(format!(
                "perplexity {} infeasible for {n} points (must lie in (1, {upper:.3}))",
                self.perplexity
            )));
        }
        if self.iterations == 0 || self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(
                "t-SNE needs iterations ≥ 1 and a positive learning rate".into(),
            ));
        }
        Ok(())
    }
}

fn squared_distances(points: &ArrayView2<'_, f64>) -> Array2<f64> {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    points
                        .row(i)
                        .iter()
                        .zip(points.row(j).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                })
                .collect()
        })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| rows[i][j])
}

const ENTROPY_TOL: f64 = 1e-5;
const BISECTION_STEPS: usize = 50;

/// Conditional affinities `p_{j|i}` for one row, with the Gaussian
/// precision chosen by bisection so the row's entropy matches
/// `ln(perplexity)`.
fn conditional_row(d2: &[f64], i: usize, target_entropy: f64) -> Vec<f64> {
    let n = d2.len();
    let mut beta = 1.0;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut row = vec![0.0; n];
    for _ in 0..BISECTION_STEPS {
        // subtract the smallest off-diagonal distance for stability
        let shift = (0..n)
            .filter(|&j| j != i)
            .map(|j| d2[j])
            .fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for j in 0..n {
            row[j] = if j == i {
                0.0
            } else {
                (-beta * (d2[j] - shift)).exp()
            };
            sum += row[j];
            weighted += row[j] * (d2[j] - shift);
        }
        let entropy = sum.ln() + beta * weighted / sum;
        for v in row.iter_mut() {
            *v /= sum;
        }
        let diff = entropy - target_entropy;
        if diff.abs() < ENTROPY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() {
                (beta + hi) / 2.0
            } else {
                beta * 2.0
            };
        } else {
            hi = beta;
            beta = if lo.is_finite() {
                (beta + lo) / 2.0
            } else {
                beta / 2.0
            };
        }
    }
    row
}

/// Symmetrized high-dimensional affinities `(p_{j|i} + p_{i|j}) / 2n`.
pub fn joint_affinities(points: ArrayView2<'_, f64>, perplexity: f64) -> Result<Array2<f64>> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::Config("affinities need at least two points".into()));
    }
    let d2 = squared_distances(&points);
    let target = perplexity.ln();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| conditional_row(d2.row(i).as_slice().expect("standard layout"), i, target))
        .collect();
    let p = Array2::from_shape_fn((n, n), |(i, j)| {
        (rows[i][j] + rows[j][i]) / (2.0 * n as f64)
    });
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite affinity".into()));
    }
    Ok(p)
}

/// KL(P ‖ Q) of a 2-d (or any-d) layout `y` and its gradient.
pub fn tsne_objective(p: &Array2<f64>, y: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = y.nrows();
    let mut num = Array2::zeros((n, n));
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = y
                .row(i)
                .iter()
                .zip(y.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = 1.0 / (1.0 + d2);
            num[[i, j]] = v;
            num[[j, i]] = v;
            total += 2.0 * v;
        }
    }
    let mut kl = 0.0;
    let mut grad = Array2::zeros(y.dim());
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let q = (num[[i, j]] / total).max(1e-300);
            let pij = p[[i, j]];
            if pij > 0.0 {
                kl += pij * (pij / q).ln();
            }
            let coef = 4.0 * (pij - q) * num[[i, j]];
            for t in 0..y.ncols() {
                grad[[i, t]] += coef * (y[[i, t]] - y[[j, t]]);
            }
        }
    }
    (kl, grad)
}

/// Initial layout: every coordinate drawn from N(0, 1e-4²).
pub fn tsne_init(n: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, 2), || rng.normal(0.0, 1e-4))
}

/// Exact t-SNE to two dimensions.
///
/// Gradient descent with momentum (and per-coordinate adaptive gains);
/// affinities are exaggerated and the lower momentum is used for the first
/// `exaggeration_iters` iterations.
pub fn tsne_embed(points: ArrayView2<'_, f64>, config: &TsneConfig) -> Result<Array2<f64>> {
    let n = points.nrows();
    config.validate(n)?;
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("t-SNE input contains non-finite values".into()));
    }
    let p = joint_affinities(points, config.perplexity)?;
    let mut rng = Rng::new(config.seed);
    let mut y = tsne_init(n, &mut rng);
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let exaggerated = &p * config.early_exaggeration;

    for it in 0..config.iterations {
        let early = it < config.exaggeration_iters;
        let target = if early { &exaggerated } else { &p };
        let momentum = if early {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let (_, grad) = tsne_objective(target, &y);
        ndarray::Zip::from(&mut gains)
            .and(&grad)
            .and(&velocity)
            .for_each(|g, &dy, &v| {
                *g = if (dy > 0.0) != (v > 0.0) {
                    *g + 0.2
                } else {
                    (*g * 0.8).max(0.01)
                };
            });
        velocity = &velocity * momentum - &(&gains * &grad) * config.learning_rate;
        y += &velocity;
        let mean = y.mean_axis(Axis(0)).expect("n ≥ 5");
        y -= &mean;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("t-SNE layout diverged".into()));
    }
    Ok(y)
}
