//! Few-shot prompt templates.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use bento_core::seed::rng_for;
use bento_core::TaskId;

use crate::data::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    #[default]
    Mmlu,
    Flan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub style: PromptStyle,
    /// Subject for MMLU-style prompts; unused by the FLAN header.
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub source: TaskId,
    pub seed: u64,
    pub exemplars: Vec<Example>,
}

impl PromptTemplate {
    pub fn new(style: PromptStyle, instruction: impl Into<String>) -> Self {
        Self { style, instruction: instruction.into() }
    }

    fn header(&self) -> String {
        match self.style {
            PromptStyle::Mmlu => format!(
                "The following are multiple choice questions (with answers) about {}.\n\n",
                self.instruction
            ),
            PromptStyle::Flan => {
                "You are a helpful AI assistant. Here are some example input-output pairs that you should follow.\n\n"
                    .to_string()
            }
        }
    }

    fn exemplar(&self, input: &str, output: &str) -> String {
        match self.style {
            PromptStyle::Mmlu => format!("{input}\nAnswer: {output}\n\n"),
            PromptStyle::Flan => format!("Input:\n{input}\nOutput: {output}\n\n"),
        }
    }

    fn query(&self, question: &str) -> String {
        match self.style {
            PromptStyle::Mmlu => format!("{question}\nAnswer: "),
            PromptStyle::Flan => format!("Input:\n{question}\nOutput: "),
        }
    }

    pub fn render(&self, exemplars: &[Example], question: &str) -> String {
        let mut out = self.header();
        for e in exemplars {
            out.push_str(&self.exemplar(&e.input, &e.output));
        }
        out.push_str(&self.query(question));
        out
    }
}

/// Source task's instruction and exemplars followed by the target question.
pub fn build_prompt(template: &PromptTemplate, ex: &ExemplarSet, question: &str) -> String {
    template.render(&ex.exemplars, question)
}

/// `l` exemplars drawn without replacement, in draw order. A pool smaller
/// than `l` is used whole (some tasks only ship a handful of exemplars).
pub fn sample_exemplars(source: &TaskId, pool: &[Example], l: usize, seed: u64) -> ExemplarSet {
    let take = if pool.len() < l {
        log::warn!("task {source}: pool has {} exemplars, wanted {l}; using all of them", pool.len());
        pool.len()
    } else {
        l
    };
    let mut rng = rng_for(seed, &format!("exemplars/{source}"));
    let exemplars = index::sample(&mut rng, pool.len(), take).into_iter().map(|i| pool[i].clone()).collect();
    ExemplarSet { source: source.clone(), seed, exemplars }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(q: &str, a: &str) -> Example {
        Example { id: None, input: q.into(), output: a.into() }
    }

    #[test]
    fn mmlu_single_exemplar() {
        let t = PromptTemplate::new(PromptStyle::Mmlu, "anatomy");
        assert_eq!(
            t.render(&[ex("Q1", "A")], "Q2"),
            "The following are multiple choice questions (with answers) about anatomy.\n\nQ1\nAnswer: A\n\nQ2\nAnswer: "
        );
    }

    #[test]
    fn flan_without_exemplars() {
        let t = PromptTemplate::new(PromptStyle::Flan, "ignored");
        assert_eq!(
            t.render(&[], "X"),
            "You are a helpful AI assistant. Here are some example input-output pairs that you should follow.\n\nInput:\nX\nOutput: "
        );
    }

    #[test]
    fn exemplars_keep_order() {
        let t = PromptTemplate::new(PromptStyle::Flan, "");
        let p = t.render(&[ex("b", "2"), ex("a", "1")], "c");
        assert!(p.contains("Input:\nb\nOutput: 2\n\nInput:\na\nOutput: 1\n\nInput:\nc\nOutput: "));
    }

    #[test]
    fn sampling_is_deterministic() {
        let src = TaskId::new("s").unwrap();
        let pool: Vec<Example> = (0..20).map(|i| ex(&format!("q{i}"), "A")).collect();
        let a = sample_exemplars(&src, &pool, 5, 3);
        assert_eq!(a, sample_exemplars(&src, &pool, 5, 3));
        assert_eq!(a.exemplars.len(), 5);
        let mut ids: Vec<&str> = a.exemplars.iter().map(|e| e.input.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 5);
        assert_ne!(a, sample_exemplars(&src, &pool, 5, 4));
    }

    #[test]
    fn small_pool_is_used_whole() {
        let src = TaskId::new("s").unwrap();
        let pool = vec![ex("x", "1"), ex("y", "2"), ex("z", "3")];
        let s = sample_exemplars(&src, &pool, 5, 0);
        assert_eq!(s.exemplars.len(), 3);
        let full = sample_exemplars(&src, &pool, 3, 0);
        let mut inputs: Vec<&str> = full.exemplars.iter().map(|e| e.input.as_str()).collect();
        inputs.sort();
        assert_eq!(inputs, vec!["x", "y", "z"]);
    }
}
