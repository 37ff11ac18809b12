//! Task data on disk.
//!
//! Layout under a data directory:
//!
//! ```text
//! tasks.jsonl            {"id": "anatomy", "instruction": "anatomy"}  (one per task)
//! <id>.pool.jsonl        exemplar pool
//! <id>.test.jsonl        test questions
//! ```
//!
//! Example lines are either `{"id"?, "input", "output"}` or the four-option
//! form `{"id"?, "question", "choices": [..4], "answer"}` where `answer` is a
//! letter or a 0-based index. Options are folded into the input as
//! `"<question>\nA. ..\nB. ..\nC. ..\nD. .."` and the gold output is the letter.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use bento_core::selection::TaskCorpus;
use bento_core::TaskId;

use crate::error::{CollectorError, Result};

pub const OPTION_LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskData {
    pub spec: TaskSpec,
    pub pool: Vec<Example>,
    pub test: Vec<Example>,
}

impl TaskData {
    pub fn id(&self) -> &TaskId {
        &self.spec.id
    }

    /// Stable question id: the explicit id, else the 0-based line position.
    pub fn question_id(&self, i: usize) -> String {
        self.test[i].id.clone().unwrap_or_else(|| format!("q{i}"))
    }

    /// Everything textual about the task, for BM25.
    pub fn corpus(&self) -> TaskCorpus {
        let mut texts = vec![self.spec.instruction.clone()];
        for e in self.pool.iter().chain(&self.test) {
            texts.push(e.input.clone());
            texts.push(e.output.clone());
        }
        TaskCorpus { task: self.spec.id.clone(), texts }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawExample {
    Plain {
        #[serde(default)]
        id: Option<String>,
        input: String,
        output: String,
    },
    Choice {
        #[serde(default)]
        id: Option<String>,
        question: String,
        choices: Vec<String>,
        answer: serde_json::Value,
    },
}

/// Folds a four-option question into a single input/letter pair.
pub fn multiple_choice_example(id: Option<String>, question: &str, choices: &[String], answer: &str) -> std::result::Result<Example, String> {
    if choices.len() != OPTION_LETTERS.len() {
        return Err(format!("expected 4 choices, got {}", choices.len()));
    }
    let letter = answer.trim().to_ascii_uppercase();
    if !OPTION_LETTERS.iter().any(|c| letter == c.to_string()) {
        return Err(format!("answer {answer:?} is not one of A-D"));
    }
    let mut input = question.to_string();
    for (l, c) in OPTION_LETTERS.iter().zip(choices) {
        input.push_str(&format!("\n{l}. {c}"));
    }
    Ok(Example { id, input, output: letter })
}

fn convert(raw: RawExample) -> std::result::Result<Example, String> {
    match raw {
        RawExample::Plain { id, input, output } => Ok(Example { id, input, output }),
        RawExample::Choice { id, question, choices, answer } => {
            let letter = match &answer {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => {
                    let i = n.as_u64().ok_or_else(|| format!("bad answer index {n}"))? as usize;
                    OPTION_LETTERS.get(i).ok_or_else(|| format!("answer index {i} out of range"))?.to_string()
                }
                other => return Err(format!("bad answer {other}")),
            };
            multiple_choice_example(id, &question, &choices, &letter)
        }
    }
}

pub fn read_examples(path: &Path) -> Result<Vec<Example>> {
    let data_err = |message: String| CollectorError::Data { path: path.display().to_string(), message };
    let reader = BufReader::new(File::open(path).map_err(|e| data_err(e.to_string()))?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawExample = serde_json::from_str(&line).map_err(|e| data_err(format!("line {}: {e}", n + 1)))?;
        out.push(convert(raw).map_err(|m| data_err(format!("line {}: {m}", n + 1)))?);
    }
    Ok(out)
}

pub fn read_task_list(path: &Path) -> Result<Vec<TaskSpec>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CollectorError::Data {
            path: path.display().to_string(),
            message: format!("line {}: {e}", n + 1),
        })?);
    }
    bento_core::ict::index_tasks(&out.iter().map(|t: &TaskSpec| t.id.clone()).collect::<Vec<_>>())?;
    Ok(out)
}

pub fn load_task(data_dir: &Path, spec: &TaskSpec) -> Result<TaskData> {
    let pool = read_examples(&data_dir.join(format!("{}.pool.jsonl", spec.id)))?;
    let test = read_examples(&data_dir.join(format!("{}.test.jsonl", spec.id)))?;
    if test.is_empty() {
        return Err(CollectorError::EmptyTestSet(spec.id.to_string()));
    }
    if pool.is_empty() {
        return Err(CollectorError::EmptyPool(spec.id.to_string()));
    }
    Ok(TaskData { spec: spec.clone(), pool, test })
}

/// Task list plus every task's pool and test file.
pub fn load_benchmark(task_list: &Path, data_dir: &Path) -> Result<Vec<TaskData>> {
    read_task_list(task_list)?.iter().map(|s| load_task(data_dir, s)).collect()
}
