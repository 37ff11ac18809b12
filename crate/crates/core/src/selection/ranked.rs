use std::collections::HashSet;

use nalgebra::DMatrix;

use super::{Method, SelectionResult};
use crate::error::{BentoError, Result};
use crate::ict::{index_tasks, TaskId};

/// The first `k` tasks of an externally produced ranking.
pub fn prompt_ranked_selection(tasks: &[TaskId], ranked: &[TaskId], k: usize) -> Result<SelectionResult> {
    if k == 0 {
        return Err(BentoError::InvalidArgument("k must be >= 1".into()));
    }
    let index = index_tasks(tasks)?;
    let mut seen = HashSet::new();
    let mut idx = Vec::with_capacity(ranked.len());
    for t in ranked {
        let &i = index.get(t).ok_or_else(|| BentoError::UnknownTask(t.to_string()))?;
        if !seen.insert(i) {
            return Err(BentoError::DuplicateTask(t.to_string()));
        }
        idx.push(i);
    }
    if idx.len() < k {
        return Err(BentoError::InvalidArgument(format!("ranking has {} tasks, need {k}", idx.len())));
    }
    let mut r = SelectionResult::new(Method::PromptRanked, tasks, &idx[..k], Vec::new(), &DMatrix::zeros(0, 0));
    r.input_digest = crate::seed::digest_hex(
        ranked.iter().map(TaskId::as_str).collect::<Vec<_>>().join("\n").as_bytes(),
    );
    Ok(r)
}
