//! Composed selection pipelines: normalized matrix to selected tasks.

use serde::{Deserialize, Serialize};

use crate::embedding::{le_embed, normalized_laplacian, EmbeddingDim, LeEmbedding};
use crate::error::{BentoError, Result};
use crate::ict::{IctMatrix, Normalization};
use crate::selection::{bm25_matrix, fl_greedy, Bm25Config, GreedyStrategy, Method, SelectionResult, TaskCorpus};
use crate::similarity::{
    cosine_rows, distance_to_similarity, pairwise_distance, row_distances, DistanceMetric, KernelConfig, SimilarityKind,
    SimilarityMatrix,
};

/// Which similarity the facility-location greedy runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Distance kernel on the normalized matrix rows.
    #[default]
    Sim,
    /// Cosine of Laplacian-eigenmap rows.
    Le,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub metric: DistanceMetric,
    pub kernel: KernelConfig,
    pub dim: EmbeddingDim,
    pub strategy: GreedyStrategy,
    /// Divide `E` by the population std of its off-diagonal entries before the kernel.
    pub standardize_distances: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            metric: DistanceMetric::Euclidean,
            kernel: KernelConfig::default(),
            dim: EmbeddingDim::Eigengap,
            strategy: GreedyStrategy::Lazy,
            standardize_distances: false,
        }
    }
}

/// `S = c - E` over the rows of a normalized matrix.
pub fn kernel_similarity(a: &IctMatrix, opts: &PipelineOptions) -> Result<SimilarityMatrix> {
    let e = pairwise_distance(a, opts.metric)?;
    if !opts.standardize_distances {
        return distance_to_similarity(&e, &opts.kernel);
    }
    let n = e.values().nrows();
    let off: Vec<f64> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|p| e.values()[p]).collect();
    let mean = off.iter().sum::<f64>() / off.len() as f64;
    let std = (off.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / off.len() as f64).sqrt();
    if !(std > 0.0) {
        return Err(BentoError::ZeroVariance("distance matrix".into()));
    }
    // rebuilt from scaled rows so the metric and task list carry over
    let scaled = row_distances(a.tasks(), &a.values().map(|x| x / std), opts.metric)?;
    distance_to_similarity(&scaled, &opts.kernel)
}

/// Laplacian eigenmap of the kernel similarity and the cosine similarity of its rows.
pub fn le_similarity(s: &SimilarityMatrix, dim: EmbeddingDim) -> Result<(LeEmbedding, SimilarityMatrix)> {
    let emb = le_embed(&normalized_laplacian(s)?, dim)?;
    let cos = cosine_rows(&emb.tasks, &emb.vectors, SimilarityKind::LeCosine)?;
    Ok((emb, cos))
}

/// The similarity the greedy step runs on for a given representation.
pub fn selection_similarity(a: &IctMatrix, rep: Representation, opts: &PipelineOptions) -> Result<SimilarityMatrix> {
    let s = kernel_similarity(a, opts)?;
    match rep {
        Representation::Sim => Ok(s),
        Representation::Le => Ok(le_similarity(&s, opts.dim)?.1),
    }
}

/// Facility-location greedy on a normalized ICT matrix.
pub fn bento_select(a: &IctMatrix, k: usize, rep: Representation, opts: &PipelineOptions) -> Result<SelectionResult> {
    fl_greedy(&selection_similarity(a, rep, opts)?, k, opts.strategy)
}

/// Same pipeline with a BM25 matrix standing in for ICT.
pub fn bm25_select(
    corpora: &[TaskCorpus],
    k: usize,
    rep: Representation,
    bm25: &Bm25Config,
    center: bool,
    opts: &PipelineOptions,
) -> Result<SelectionResult> {
    let raw = bm25_matrix(corpora, bm25)?;
    let a = if center {
        raw.center_columns()?
    } else {
        // bypass: feed raw scores to the kernel as if normalized
        IctMatrix::new(raw.tasks().to_vec(), raw.values().clone(), Normalization::Centered)?
    };
    let method = match rep {
        Representation::Sim => Method::Bm25Sim,
        Representation::Le => Method::Bm25Le,
    };
    Ok(bento_select(&a, k, rep, opts)?.with_method(method))
}
