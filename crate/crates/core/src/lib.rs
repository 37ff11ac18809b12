//! Benchmark task reduction.
//!
//! Estimate how well each task's demonstrations transfer to every other task,
//! embed tasks from that matrix, and pick a small subset that covers the rest
//! by maximizing a facility-location objective. The evaluation module scores
//! how well the subset predicts full-benchmark results.

pub mod chord;
pub mod cluster;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod ict;
pub mod io;
pub mod pipeline;
pub mod seed;
pub mod selection;
pub mod similarity;

#[cfg(test)]
mod test_support;

pub use error::{BentoError, Result};
pub use ict::{IctMatrix, Normalization, TaskId, TransferRecord};
pub use selection::{Method, SelectionResult};
pub use similarity::{SimilarityKind, SimilarityMatrix};
