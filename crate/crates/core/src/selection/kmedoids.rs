//! K-medoids baseline: cluster centers restricted to actual tasks.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Method, SelectionResult};
use crate::error::{BentoError, Result};
use crate::ict::{IctMatrix, TaskId};
use crate::similarity::{cosine_rows, row_distances, DistanceMetric, SimilarityKind, SimilarityMatrix};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMedoidsConfig {
    pub max_rounds: usize,
    pub restarts: usize,
}

impl Default for KMedoidsConfig {
    fn default() -> Self {
        Self { max_rounds: 100, restarts: 10 }
    }
}

/// Which dissimilarity the medoids are fit on.
#[derive(Debug, Clone, Copy)]
pub enum KMedoidsInput<'a> {
    /// Euclidean distance between rows of the ICT matrix.
    Raw(&'a IctMatrix),
    /// `c - S`, with `c` the kernel constant (or `max S` when absent).
    Similarity(&'a SimilarityMatrix),
    /// `1 - cosine` between Laplacian-eigenmap rows.
    Embedding { tasks: &'a [TaskId], rows: &'a DMatrix<f64> },
}

impl KMedoidsInput<'_> {
    fn tasks(&self) -> &[TaskId] {
        match self {
            KMedoidsInput::Raw(m) => m.tasks(),
            KMedoidsInput::Similarity(s) => s.tasks(),
            KMedoidsInput::Embedding { tasks, .. } => tasks,
        }
    }

    fn distances(&self) -> Result<DMatrix<f64>> {
        Ok(match self {
            KMedoidsInput::Raw(m) => row_distances(m.tasks(), m.values(), DistanceMetric::Euclidean)?.values().clone(),
            KMedoidsInput::Similarity(s) => {
                let c = s.c().unwrap_or_else(|| s.values().max());
                s.values().map(|x| c - x)
            }
            KMedoidsInput::Embedding { tasks, rows } => {
                cosine_rows(tasks, rows, SimilarityKind::LeCosine)?.values().map(|x| 1.0 - x)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMedoidsFit {
    /// Ordered by cluster size (largest first), then index.
    pub medoids: Vec<usize>,
    /// Position in `medoids` for each point.
    pub labels: Vec<usize>,
    pub cost: f64,
}

pub fn kmedoids(input: KMedoidsInput<'_>, k: usize, seed: u64, cfg: &KMedoidsConfig) -> Result<SelectionResult> {
    let d = input.distances()?;
    let fit = kmedoids_indices(&d, k, seed, cfg)?;
    Ok(SelectionResult::new(Method::Kmedoids, input.tasks(), &fit.medoids, Vec::new(), &d))
}

/// Alternating assignment / medoid update on a dissimilarity matrix,
/// best total cost over seeded restarts.
pub fn kmedoids_indices(d: &DMatrix<f64>, k: usize, seed: u64, cfg: &KMedoidsConfig) -> Result<KMedoidsFit> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(BentoError::Shape("dissimilarity matrix must be square".into()));
    }
    if k == 0 || k > n {
        return Err(BentoError::InvalidArgument(format!("k must be in 1..={n}, got {k}")));
    }
    let mut best: Option<KMedoidsFit> = None;
    for r in 0..cfg.restarts.max(1) {
        let fit = alternate(d, k, seed, r, cfg.max_rounds);
        if best.as_ref().is_none_or(|b| fit.cost < b.cost) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn assign(d: &DMatrix<f64>, medoids: &[usize]) -> (Vec<usize>, f64) {
    let n = d.nrows();
    let mut labels = vec![0; n];
    let mut cost = 0.0;
    for p in 0..n {
        // a medoid always represents itself, even next to a duplicate
        if let Some(pos) = medoids.iter().position(|&m| m == p) {
            labels[p] = pos;
            continue;
        }
        let (pos, dist) = medoids
            .iter()
            .enumerate()
            .map(|(pos, &m)| (pos, d[(p, m)]))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        labels[p] = pos;
        cost += dist;
    }
    (labels, cost)
}

fn alternate(d: &DMatrix<f64>, k: usize, seed: u64, restart: usize, max_rounds: usize) -> KMedoidsFit {
    let n = d.nrows();
    let mut rng = rng_for(seed, &format!("kmedoids/restart/{restart}"));

    // k-medoids++ style seeding, distance-weighted
    let mut medoids = vec![rng.random_range(0..n)];
    while medoids.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|p| {
                if medoids.contains(&p) {
                    0.0
                } else {
                    medoids.iter().map(|&m| d[(p, m)]).fold(f64::INFINITY, f64::min).max(0.0)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut x = rng.random::<f64>() * total;
            let mut chosen = None;
            for (p, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(p);
                    if x < w {
                        break;
                    }
                    x -= w;
                }
            }
            chosen.expect("positive total weight")
        } else {
            let free: Vec<usize> = (0..n).filter(|p| !medoids.contains(p)).collect();
            free[rng.random_range(0..free.len())]
        };
        medoids.push(pick);
    }

    let (mut labels, mut cost) = assign(d, &medoids);
    for _ in 0..max_rounds {
        let mut next = medoids.clone();
        for (c, m) in next.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&p| labels[p] == c).collect();
            let mut best = *m;
            let mut best_cost: f64 = members.iter().map(|&q| d[(*m, q)]).sum();
            for &cand in &members {
                let c2: f64 = members.iter().map(|&q| d[(cand, q)]).sum();
                if c2 < best_cost || (c2 == best_cost && cand < best) {
                    best = cand;
                    best_cost = c2;
                }
            }
            *m = best;
        }
        if next == medoids {
            break;
        }
        let (l2, c2) = assign(d, &next);
        if c2 > cost {
            break;
        }
        medoids = next;
        labels = l2;
        cost = c2;
    }

    // order by cluster size, then index
    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(medoids[a].cmp(&medoids[b])));
    let mut remap = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    KMedoidsFit {
        medoids: order.iter().map(|&c| medoids[c]).collect(),
        labels: labels.iter().map(|&l| remap[l]).collect(),
        cost,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ict::Normalization;

    fn ids(n: usize) -> Vec<TaskId> {
        (0..n).map(|i| TaskId::new(format!("t{i}")).unwrap()).collect()
    }

    fn planted_features() -> DMatrix<f64> {
        // three well-separated groups of three points
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        DMatrix::from_fn(9, 2, |i, j| centers[i / 3][j] + 0.1 * ((i * 3 + j) % 4) as f64)
    }

    #[test]
    fn one_medoid_per_planted_block() {
        let a = IctMatrix::new(ids(9), planted_features().resize(9, 9, 0.0), Normalization::Centered).unwrap();
        let r = kmedoids(KMedoidsInput::Raw(&a), 3, 5, &KMedoidsConfig::default()).unwrap();
        let mut blocks: Vec<usize> = r
            .selected
            .iter()
            .map(|t| t.as_str()[1..].parse::<usize>().unwrap() / 3)
            .collect();
        blocks.sort();
        assert_eq!(blocks, vec![0, 1, 2]);
        assert_eq!(r.method, Method::Kmedoids);
    }

    #[test]
    fn k_equals_n_is_identity() {
        let d = DMatrix::from_fn(4, 4, |i, j| (i as f64 - j as f64).abs());
        let fit = kmedoids_indices(&d, 4, 0, &KMedoidsConfig::default()).unwrap();
        let mut m = fit.medoids.clone();
        m.sort();
        assert_eq!(m, vec![0, 1, 2, 3]);
        assert_eq!(fit.cost, 0.0);
    }

    #[test]
    fn identical_points_cost_nothing() {
        let d = DMatrix::zeros(5, 5);
        for k in 1..=5 {
            let fit = kmedoids_indices(&d, k, 1, &KMedoidsConfig::default()).unwrap();
            assert_eq!(fit.cost, 0.0);
            let mut m = fit.medoids.clone();
            m.sort();
            m.dedup();
            assert_eq!(m.len(), k);
        }
    }

    #[test]
    fn similarity_and_embedding_variants() {
        let s = SimilarityMatrix::from_values(
            ids(4),
            DMatrix::from_row_slice(4, 4, &[3.0, 2.9, 0.1, 0.2, 2.9, 3.0, 0.2, 0.1, 0.1, 0.2, 3.0, 2.8, 0.2, 0.1, 2.8, 3.0]),
        )
        .unwrap();
        let r = kmedoids(KMedoidsInput::Similarity(&s), 2, 0, &KMedoidsConfig::default()).unwrap();
        let mut picked: Vec<usize> = r.selected.iter().map(|t| t.as_str()[1..].parse::<usize>().unwrap() / 2).collect();
        picked.sort();
        assert_eq!(picked, vec![0, 1]);

        let rows = DMatrix::from_row_slice(4, 2, &[1.0, 0.1, 1.0, 0.0, 0.0, 1.0, 0.1, 1.0]);
        let tasks = ids(4);
        let r = kmedoids(KMedoidsInput::Embedding { tasks: &tasks, rows: &rows }, 2, 0, &KMedoidsConfig::default()).unwrap();
        let mut picked: Vec<usize> = r.selected.iter().map(|t| t.as_str()[1..].parse::<usize>().unwrap() / 2).collect();
        picked.sort();
        assert_eq!(picked, vec![0, 1]);
    }

    #[test]
    fn guards() {
        let d = DMatrix::zeros(3, 3);
        assert!(kmedoids_indices(&d, 0, 0, &KMedoidsConfig::default()).is_err());
        assert!(kmedoids_indices(&d, 4, 0, &KMedoidsConfig::default()).is_err());
    }
}
