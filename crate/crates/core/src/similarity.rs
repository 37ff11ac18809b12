//! Distance and similarity kernels over task embeddings.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{BentoError, Result};
use crate::ict::{index_tasks, IctMatrix, Normalization, TaskId};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Chebyshev,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    tasks: Vec<TaskId>,
    values: DMatrix<f64>,
    metric: DistanceMetric,
}

impl DistanceMatrix {
    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn max(&self) -> f64 {
        self.values.max()
    }
}

/// Pairwise distances between the rows of a normalized ICT matrix.
pub fn pairwise_distance(m: &IctMatrix, metric: DistanceMetric) -> Result<DistanceMatrix> {
    if m.normalization() == Normalization::Raw {
        return Err(BentoError::NotNormalized);
    }
    row_distances(m.tasks(), m.values(), metric)
}

/// Pairwise distances between arbitrary feature rows.
pub fn row_distances(tasks: &[TaskId], rows: &DMatrix<f64>, metric: DistanceMetric) -> Result<DistanceMatrix> {
    let n = rows.nrows();
    if tasks.len() != n {
        return Err(BentoError::Shape(format!("{} tasks for {n} rows", tasks.len())));
    }
    index_tasks(tasks)?;
    check_finite(rows)?;
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let (ri, rj) = (rows.row(i), rows.row(j));
            let diffs = ri.iter().zip(rj.iter()).map(|(a, b)| a - b);
            let d = match metric {
                DistanceMetric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
                DistanceMetric::Chebyshev => diffs.map(f64::abs).fold(0.0, f64::max),
            };
            values[(i, j)] = d;
            values[(j, i)] = d;
        }
    }
    Ok(DistanceMatrix { tasks: tasks.to_vec(), values, metric })
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(BentoError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// How the kernel constant `c` in `S = c - E` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Relative scale: `c = t * max E`. Must exceed 1.
    pub t: f64,
    /// Absolute override for `c`; bypasses `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absolute_c: Option<f64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { t: 1.5, absolute_c: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    /// `c - E` from a distance matrix.
    DistKernel,
    /// Cosine similarity of raw embedding rows.
    CosineRows,
    /// Cosine similarity of Laplacian-eigenmap rows.
    LeCosine,
    /// Loaded or hand-built; no structural guarantees beyond symmetry.
    Precomputed,
}

impl SimilarityKind {
    pub fn is_cosine(self) -> bool {
        matches!(self, SimilarityKind::CosineRows | SimilarityKind::LeCosine)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    tasks: Vec<TaskId>,
    values: DMatrix<f64>,
    kind: SimilarityKind,
    c: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityMeta {
    pub kind: SimilarityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<DistanceMetric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl SimilarityMatrix {
    /// Wraps a precomputed symmetric matrix.
    pub fn from_values(tasks: Vec<TaskId>, values: DMatrix<f64>) -> Result<Self> {
        Self::checked(tasks, values, SimilarityKind::Precomputed, None)
    }

    fn checked(tasks: Vec<TaskId>, values: DMatrix<f64>, kind: SimilarityKind, c: Option<f64>) -> Result<Self> {
        let n = tasks.len();
        if n == 0 {
            return Err(BentoError::TooFewTasks { min: 1, got: 0 });
        }
        if values.nrows() != n || values.ncols() != n {
            return Err(BentoError::Shape(format!("{n} tasks but matrix is {}x{}", values.nrows(), values.ncols())));
        }
        index_tasks(&tasks)?;
        check_finite(&values)?;
        for i in 0..n {
            for j in (i + 1)..n {
                if values[(i, j)] != values[(j, i)] {
                    return Err(BentoError::Shape(format!("similarity is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { tasks, values, kind, c })
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    /// Kernel constant, present for `DistKernel` only.
    pub fn c(&self) -> Option<f64> {
        self.c
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Adds `alpha` to every entry. The kind is kept.
    pub fn shifted(&self, alpha: f64) -> Self {
        Self {
            tasks: self.tasks.clone(),
            values: self.values.add_scalar(alpha),
            kind: self.kind,
            c: self.c.map(|c| c + alpha),
        }
    }

    /// Values used by facility location: cosine kinds are shifted into `[0, 2]`.
    pub fn selection_values(&self) -> DMatrix<f64> {
        if self.kind.is_cosine() {
            self.values.add_scalar(1.0)
        } else {
            self.values.clone()
        }
    }

    pub fn save(&self, path: &Path, metric: Option<DistanceMetric>, config_digest: Option<&str>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        io::write_matrix_csv(std::io::BufWriter::new(f), &self.tasks, &self.values)?;
        io::write_json(
            &io::sidecar_path(path),
            &SimilarityMeta { kind: self.kind, metric, c: self.c, config_digest: config_digest.map(str::to_string) },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tasks, values) = io::read_matrix_csv(std::io::BufReader::new(std::fs::File::open(path)?))?;
        let meta = io::sidecar_path(path);
        let (kind, c) = if meta.exists() {
            let m: SimilarityMeta = io::read_json(&meta)?;
            (m.kind, m.c)
        } else {
            (SimilarityKind::Precomputed, None)
        };
        Self::checked(tasks, values, kind, c)
    }
}

/// `S = c - E` with `c = t * max E` unless an absolute `c` is configured.
pub fn distance_to_similarity(e: &DistanceMatrix, cfg: &KernelConfig) -> Result<SimilarityMatrix> {
    let c = match cfg.absolute_c {
        Some(c) => {
            if !c.is_finite() {
                return Err(BentoError::InvalidArgument(format!("kernel constant must be finite, got {c}")));
            }
            c
        }
        None => {
            if !(cfg.t > 1.0) || !cfg.t.is_finite() {
                return Err(BentoError::InvalidKernelScale(cfg.t));
            }
            let max = e.max();
            if max <= 0.0 {
                return Err(BentoError::ZeroDistances);
            }
            cfg.t * max
        }
    };
    let values = e.values.map(|d| c - d);
    SimilarityMatrix::checked(e.tasks.clone(), values, SimilarityKind::DistKernel, Some(c))
}

/// Cosine similarity between rows; the diagonal is exactly 1.
pub fn cosine_rows(tasks: &[TaskId], rows: &DMatrix<f64>, kind: SimilarityKind) -> Result<SimilarityMatrix> {
    if !kind.is_cosine() {
        return Err(BentoError::InvalidArgument(format!("{kind:?} is not a cosine kind")));
    }
    let n = rows.nrows();
    if tasks.len() != n {
        return Err(BentoError::Shape(format!("{} tasks for {n} rows", tasks.len())));
    }
    check_finite(rows)?;
    let norms: Vec<f64> = (0..n).map(|i| rows.row(i).norm()).collect();
    if let Some(i) = norms.iter().position(|&x| x == 0.0) {
        return Err(BentoError::ZeroNormRow(tasks[i].to_string()));
    }
    let mut values = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (rows.row(i).dot(&rows.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values[(i, j)] = s;
            values[(j, i)] = s;
        }
    }
    SimilarityMatrix::checked(tasks.to_vec(), values, kind, None)
}
