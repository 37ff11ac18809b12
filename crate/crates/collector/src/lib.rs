//! Transfer in-context evaluation: prompt a model on one task's questions
//! with another task's exemplars and record how well it does.

pub mod cache;
pub mod client;
pub mod data;
pub mod error;
pub mod mock;
pub mod prompt;
pub mod ranking;
pub mod scoring;
pub mod transfer;

pub use cache::{CachedBackend, ResponseCache};
pub use client::{ApiMode, CompletionBackend, CompletionRequest, CompletionResponse, EndpointConfig, HttpBackend, RetryPolicy};
pub use data::{Example, TaskData, TaskSpec};
pub use error::{CollectorError, Result};
pub use prompt::{build_prompt, sample_exemplars, ExemplarSet, PromptStyle, PromptTemplate};
pub use transfer::{run_grid, run_transfer_eval, CollectConfig, CompletenessReport, Scoring};
