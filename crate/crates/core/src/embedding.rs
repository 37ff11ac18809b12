//! Normalized graph Laplacian and Laplacian-eigenmap embedding.
//!
//! The similarity matrix is read as the weighted adjacency of a complete
//! graph over tasks. With `D = diag(S 1)` the symmetric normalized Laplacian
//! is `L = I - D^-1/2 S D^-1/2`, and the embedding keeps the eigenvectors of
//! its smallest eigenvalues.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{BentoError, Result};
use crate::ict::TaskId;
use crate::similarity::SimilarityMatrix;

/// Upper bound on eigenvalues inspected by the eigengap heuristic.
pub const EIGENGAP_WINDOW: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix {
    tasks: Vec<TaskId>,
    values: DMatrix<f64>,
    degrees: DVector<f64>,
}

impl LaplacianMatrix {
    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn degrees(&self) -> &DVector<f64> {
        &self.degrees
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// All eigenvalues in ascending order.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        Ok(decompose(&self.values)?.0)
    }
}

pub fn normalized_laplacian(s: &SimilarityMatrix) -> Result<LaplacianMatrix> {
    let v = s.values();
    let n = v.nrows();
    for i in 0..n {
        for j in 0..n {
            if v[(i, j)] < 0.0 {
                return Err(BentoError::NegativeSimilarity { row: i, col: j, value: v[(i, j)] });
            }
        }
    }
    let degrees = DVector::from_iterator(n, (0..n).map(|i| v.row(i).sum()));
    if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
        return Err(BentoError::ZeroDegree(s.tasks()[i].to_string()));
    }
    let sqrt_d = degrees.map(f64::sqrt);
    // the product sqrt_d[i] * sqrt_d[j] is commutative, keeping L exactly symmetric
    let values = DMatrix::from_fn(n, n, |i, j| {
        let w = v[(i, j)] / (sqrt_d[i] * sqrt_d[j]);
        if i == j {
            1.0 - w
        } else {
            -w
        }
    });
    Ok(LaplacianMatrix { tasks: s.tasks().to_vec(), values, degrees })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeEmbedding {
    pub tasks: Vec<TaskId>,
    /// N x K, one eigenvector per column.
    pub vectors: DMatrix<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
}

impl LeEmbedding {
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Rows scaled to unit length (the Ng-Jordan-Weiss variant). Zero rows stay zero.
    pub fn row_normalized(&self) -> DMatrix<f64> {
        let mut out = self.vectors.clone();
        for mut row in out.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row.unscale_mut(n);
            }
        }
        out
    }
}

/// How many eigenvectors to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingDim {
    Fixed(usize),
    #[default]
    Eigengap,
}

/// Largest gap among the first `min(N, 16)` ascending eigenvalues.
///
/// Returns the number of eigenvalues below the gap, at least 2 when N >= 2;
/// the trivial gap after the null eigenvalue alone never yields a useful
/// embedding. Ties pick the smaller dimension.
pub fn eigengap_dim(eigenvalues: &[f64]) -> usize {
    let m = eigenvalues.len().min(EIGENGAP_WINDOW);
    if m <= 2 {
        return m.max(1);
    }
    let mut best = 2;
    let mut best_gap = eigenvalues[2] - eigenvalues[1];
    for k in 3..m {
        let gap = eigenvalues[k] - eigenvalues[k - 1];
        // relative slack so float noise does not break ties
        if gap > best_gap + 1e-12 * (1.0 + best_gap.abs()) {
            best_gap = gap;
            best = k;
        }
    }
    best
}

pub fn le_embed(l: &LaplacianMatrix, dim: EmbeddingDim) -> Result<LeEmbedding> {
    let n = l.len();
    let (eigenvalues, vectors) = decompose(&l.values)?;
    let k = match dim {
        EmbeddingDim::Fixed(k) => k,
        EmbeddingDim::Eigengap => eigengap_dim(&eigenvalues),
    };
    if k == 0 || k > n {
        return Err(BentoError::InvalidArgument(format!("embedding dimension must be in 1..={n}, got {k}")));
    }
    Ok(LeEmbedding {
        tasks: l.tasks.clone(),
        vectors: vectors.columns(0, k).into_owned(),
        eigenvalues: eigenvalues[..k].to_vec(),
    })
}

/// Dense symmetric eigendecomposition, ascending, with a fixed sign per
/// eigenvector (first clearly nonzero component positive).
fn decompose(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(BentoError::Eigensolver {
        residual: f64::NAN,
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let tol = 1e-10 * col.amax();
        if let Some(first) = col.iter().find(|x| x.abs() > tol) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(dst, &col);
    }

    let lambda = DMatrix::from_diagonal(&DVector::from_vec(values.clone()));
    let residual = (m * &vectors - &vectors * lambda).norm();
    if !residual.is_finite() || residual > 1e-8 * (1.0 + m.norm()) {
        return Err(BentoError::Eigensolver { residual });
    }
    Ok((values, vectors))
}
