//! K-Means on embedding rows, used for spectral clustering.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::LeEmbedding;
use crate::error::{BentoError, Result};
use crate::ict::TaskId;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub restarts: usize,
    /// Scale embedding rows to unit length before clustering.
    pub normalize_rows: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iter: 300, restarts: 10, normalize_rows: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub tasks: Vec<TaskId>,
    /// Labels are numbered in order of first appearance.
    pub labels: Vec<usize>,
    pub k_clusters: usize,
    pub inertia: f64,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }
}

pub fn spectral_cluster(emb: &LeEmbedding, k_clusters: usize, seed: u64, cfg: &KMeansConfig) -> Result<ClusterAssignment> {
    let rows = if cfg.normalize_rows { emb.row_normalized() } else { emb.vectors.clone() };
    let (labels, inertia) = kmeans(&rows, k_clusters, seed, cfg)?;
    Ok(ClusterAssignment { tasks: emb.tasks.clone(), labels, k_clusters, inertia })
}

/// K-Means with k-means++ seeding and restarts; keeps the lowest inertia.
///
/// A cluster that empties out is re-seeded at the point farthest from its
/// own centroid, so every returned cluster is non-empty.
pub fn kmeans(rows: &DMatrix<f64>, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<(Vec<usize>, f64)> {
    let n = rows.nrows();
    if k == 0 || k > n {
        return Err(BentoError::InvalidArgument(format!("cluster count must be in 1..={n}, got {k}")));
    }
    let points: Vec<Vec<f64>> = (0..n).map(|i| rows.row(i).iter().copied().collect()).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..cfg.restarts.max(1) {
        let (labels, inertia) = lloyd(&points, k, seed, r, cfg.max_iter);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    let (labels, inertia) = best.expect("at least one restart");
    Ok((canonical_labels(&labels), inertia))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(points: &[Vec<f64>], k: usize, seed: u64, restart: usize, max_iter: usize) -> (Vec<usize>, f64) {
    let n = points.len();
    let dim = points[0].len();
    let mut rng = rng_for(seed, &format!("kmeans/restart/{restart}"));

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut x = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if x < w {
                    chosen = i;
                    break;
                }
                x -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut next: Vec<usize> = points
            .iter()
            .map(|p| {
                let mut best = 0;
                let mut bd = f64::INFINITY;
                for (c, ctr) in centroids.iter().enumerate() {
                    let d = sq_dist(p, ctr);
                    if d < bd {
                        bd = d;
                        best = c;
                    }
                }
                best
            })
            .collect();
        fill_empty_clusters(points, &mut centroids, &mut next, k);
        let changed = next != labels;
        labels = next;
        update_centroids(points, &labels, &mut centroids, dim);
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
    (labels, inertia)
}

fn fill_empty_clusters(points: &[Vec<f64>], centroids: &mut [Vec<f64>], labels: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        // farthest point among clusters that can spare one
        let mut far = None;
        let mut fd = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if sizes[labels[i]] > 1 {
                let d = sq_dist(p, &centroids[labels[i]]);
                if d > fd {
                    fd = d;
                    far = Some(i);
                }
            }
        }
        let i = far.expect("k <= n guarantees a donor cluster");
        labels[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

fn update_centroids(points: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>], dim: usize) {
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
}

fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}
