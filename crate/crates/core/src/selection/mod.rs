//! Representative-task selectors and baselines.

mod bm25;
mod facility;
mod kmedoids;
mod random;
mod ranked;

pub use bm25::{bm25_matrix, bm25_score_matrix, tokenize, Bm25Config, TaskCorpus};
pub use facility::{
    bruteforce_indices, fl_bruteforce, fl_greedy, fl_value, fl_value_of, greedy_indices, GreedyStrategy,
    BRUTE_FORCE_MAX_TASKS,
};
pub use kmedoids::{kmedoids, kmedoids_indices, KMedoidsConfig, KMedoidsFit, KMedoidsInput};
pub use random::random_subsets;
pub use ranked::prompt_ranked_selection;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ict::TaskId;
use crate::seed::matrix_digest;
use crate::similarity::SimilarityKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FlGreedy,
    FlBruteforce,
    Kmedoids,
    Random,
    Bm25Sim,
    Bm25Le,
    PromptRanked,
}

impl Method {
    pub fn is_facility_location(self) -> bool {
        matches!(self, Method::FlGreedy | Method::FlBruteforce | Method::Bm25Sim | Method::Bm25Le)
    }
}

/// An ordered task subset plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<SimilarityKind>,
    pub k: usize,
    /// In selection order.
    pub selected: Vec<TaskId>,
    /// `f(X)` after each greedy step; empty for non-FL methods.
    pub objective_trace: Vec<f64>,
    /// Digest of the matrix the selector ran on.
    pub input_digest: String,
    #[serde(default)]
    pub config_digest: String,
}

impl SelectionResult {
    pub(crate) fn new(method: Method, tasks: &[TaskId], idx: &[usize], trace: Vec<f64>, input: &DMatrix<f64>) -> Self {
        Self {
            method,
            similarity: None,
            k: idx.len(),
            selected: idx.iter().map(|&i| tasks[i].clone()).collect(),
            objective_trace: trace,
            input_digest: matrix_digest(tasks, input),
            config_digest: String::new(),
        }
    }

    pub fn with_similarity(mut self, kind: SimilarityKind) -> Self {
        self.similarity = Some(kind);
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_config_digest(mut self, digest: impl Into<String>) -> Self {
        self.config_digest = digest.into();
        self
    }

    pub fn selected_str(&self) -> Vec<&str> {
        self.selected.iter().map(TaskId::as_str).collect()
    }
}
