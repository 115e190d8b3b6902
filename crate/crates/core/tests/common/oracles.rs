//! Slow, direct reference implementations used to check the metric code.

#![allow(dead_code)]

use ndarray::ArrayView2;

fn dist(x: &ArrayView2<'_, f64>, a: usize, b: usize) -> f64 {
    let mut s = 0.0;
    for t in 0..x.ncols() {
        let d = x[[a, t]] - x[[b, t]];
        s += d * d;
    }
    s.sqrt()
}

fn groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut values: Vec<usize> = labels.to_vec();
    values.sort_unstable();
    values.dedup();
    values
        .iter()
        .map(|v| (0..labels.len()).filter(|&i| labels[i] == *v).collect())
        .collect()
}

pub fn silhouette(x: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let gs = groups(labels);
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = gs.iter().position(|g| g.contains(&i)).unwrap();
        if gs[own].len() == 1 {
            continue;
        }
        let a = gs[own]
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| dist(&x, i, j))
            .sum::<f64>()
            / (gs[own].len() - 1) as f64;
        let mut b = f64::INFINITY;
        for (c, g) in gs.iter().enumerate() {
            if c != own {
                b = b.min(g.iter().map(|&j| dist(&x, i, j)).sum::<f64>() / g.len() as f64);
            }
        }
        if a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

/// Between-cluster dispersion taken as total minus within.
pub fn calinski_harabasz(x: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let gs = groups(labels);
    let (n, d) = x.dim();
    let k = gs.len();
    let mut total = 0.0;
    let mut within = 0.0;
    for t in 0..d {
        let m = (0..n).map(|i| x[[i, t]]).sum::<f64>() / n as f64;
        total += (0..n).map(|i| (x[[i, t]] - m).powi(2)).sum::<f64>();
        for g in &gs {
            let gm = g.iter().map(|&i| x[[i, t]]).sum::<f64>() / g.len() as f64;
            within += g.iter().map(|&i| (x[[i, t]] - gm).powi(2)).sum::<f64>();
        }
    }
    if within < 1e-300 {
        return f64::INFINITY;
    }
    (total - within) / within * (n - k) as f64 / (k - 1) as f64
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for slot in 0..m {
            let mut q = p.clone();
            q.insert(slot, m - 1);
            out.push(q);
        }
    }
    out
}

/// Best one-to-one relabeling found by trying every permutation.
pub fn accuracy(truth: &[usize], clusters: &[usize]) -> f64 {
    let tv = groups(truth);
    let cv = groups(clusters);
    let m = tv.len().max(cv.len());
    let mut best = 0;
    for perm in permutations(m) {
        let hits = (0..cv.len())
            .filter(|&c| perm[c] < tv.len())
            .map(|c| cv[c].iter().filter(|i| tv[perm[c]].contains(i)).count())
            .sum::<usize>();
        best = best.max(hits);
    }
    best as f64 / truth.len() as f64
}
