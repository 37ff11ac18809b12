//! Ask a model to rank tasks by how representative they are.

use std::collections::HashSet;

use bento_core::TaskId;

use crate::client::{ApiMode, CompletionBackend, CompletionRequest};
use crate::error::{CollectorError, Result};

pub fn ranking_prompt(tasks: &[TaskId]) -> String {
    let mut p = String::from("Here are the tasks of a benchmark:\n");
    for t in tasks {
        p.push_str(&format!("- {t}\n"));
    }
    p.push_str(
        "\nSuggest which tasks are most representative of the whole benchmark and rank all of them, \
         most representative first. Reply with a numbered list, one task name per line, like \"1. task_name\".\n",
    );
    p
}

fn list_item(line: &str) -> Option<&str> {
    let line = line.trim();
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let rest = line[digits..].strip_prefix(['.', ')', ':'])?;
    Some(rest.trim().trim_matches(|c: char| matches!(c, '*' | '`' | '"' | '\'')).trim())
}

/// Numbered-list entries that name a known task, first occurrence kept;
/// unmentioned tasks follow in their original order.
pub fn parse_ranking(response: &str, tasks: &[TaskId]) -> Result<Vec<TaskId>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for name in response.lines().filter_map(list_item) {
        let hit = tasks
            .iter()
            .find(|t| t.as_str() == name)
            .or_else(|| tasks.iter().find(|t| t.as_str().eq_ignore_ascii_case(name)));
        match hit {
            Some(t) if seen.insert(t.clone()) => out.push(t.clone()),
            Some(_) => {}
            None => log::warn!("ranking names unknown task {name:?}"),
        }
    }
    if out.is_empty() {
        return Err(CollectorError::UnparseableRanking { raw: response.to_string() });
    }
    let missing: Vec<&TaskId> = tasks.iter().filter(|t| !seen.contains(*t)).collect();
    if !missing.is_empty() {
        log::warn!("ranking omitted {} tasks; appending them in original order", missing.len());
        out.extend(missing.into_iter().cloned());
    }
    Ok(out)
}

pub fn rank_tasks_by_prompt(tasks: &[TaskId], backend: &dyn CompletionBackend, model: &str, mode: ApiMode) -> Result<Vec<TaskId>> {
    let req = CompletionRequest::generate(model, ranking_prompt(tasks), 1024, mode);
    parse_ranking(&backend.complete(&req)?.text, tasks)
}
