//! Okapi BM25 between task corpora, a text-only stand-in for ICT.
//!
//! Each task's corpus (instructions, questions, answers, ...) is flattened
//! into one document. Entry `(i, j)` scores task `i`'s distinct terms as the
//! query against task `j`'s document, with IDF taken over the task documents.

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{BentoError, Result};
use crate::ict::{IctMatrix, Normalization, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Config {
    pub k1: f64,
    pub b: f64,
    /// Average the matrix with its transpose.
    pub symmetrize: bool,
}

impl Default for Bm25Config {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75, symmetrize: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCorpus {
    pub task: TaskId,
    pub texts: Vec<String>,
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

struct Document {
    tf: HashMap<String, usize>,
    len: usize,
}

/// Raw BM25 scores, rows = query task, columns = document task.
pub fn bm25_score_matrix(corpora: &[TaskCorpus], cfg: &Bm25Config) -> Result<DMatrix<f64>> {
    if !(cfg.k1 > 0.0) || !(0.0..=1.0).contains(&cfg.b) {
        return Err(BentoError::InvalidArgument(format!("need k1 > 0 and 0 <= b <= 1, got k1={} b={}", cfg.k1, cfg.b)));
    }
    let docs = corpora
        .iter()
        .map(|c| {
            let mut tf = HashMap::new();
            let mut len = 0;
            for t in c.texts.iter().flat_map(|s| tokenize(s)) {
                *tf.entry(t).or_insert(0) += 1;
                len += 1;
            }
            if len == 0 {
                return Err(BentoError::EmptyCorpus(c.task.to_string()));
            }
            Ok(Document { tf, len })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = docs.len();
    let avgdl = docs.iter().map(|d| d.len as f64).sum::<f64>() / n as f64;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for d in &docs {
        for t in d.tf.keys() {
            *df.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let idf = |t: &str| {
        let nt = df.get(t).copied().unwrap_or(0) as f64;
        (1.0 + (n as f64 - nt + 0.5) / (nt + 0.5)).ln()
    };

    let mut scores = DMatrix::zeros(n, n);
    for (i, q) in docs.iter().enumerate() {
        // sorted so the float sum is reproducible
        let terms: BTreeSet<&str> = q.tf.keys().map(String::as_str).collect();
        for (j, d) in docs.iter().enumerate() {
            let norm = cfg.k1 * (1.0 - cfg.b + cfg.b * d.len as f64 / avgdl);
            scores[(i, j)] = terms
                .iter()
                .filter_map(|t| d.tf.get(*t).map(|&tf| (t, tf as f64)))
                .map(|(t, tf)| idf(t) * tf * (cfg.k1 + 1.0) / (tf + norm))
                .sum();
        }
    }
    if cfg.symmetrize {
        let t = scores.transpose();
        scores = (scores + t) * 0.5;
    }
    Ok(scores)
}

/// BM25 matrix packaged as a raw ICT matrix so it can flow through the same
/// normalization, kernel and selection steps.
pub fn bm25_matrix(corpora: &[TaskCorpus], cfg: &Bm25Config) -> Result<IctMatrix> {
    let scores = bm25_score_matrix(corpora, cfg)?;
    IctMatrix::new(corpora.iter().map(|c| c.task.clone()).collect(), scores, Normalization::Raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn corpus(task: &str, text: &str) -> TaskCorpus {
        TaskCorpus { task: TaskId::new(task).unwrap(), texts: vec![text.to_string()] }
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("Hello, World! x2-y"), vec!["hello", "world", "x2", "y"]);
        assert!(tokenize(" ,.; ").is_empty());
    }

    /// Hand evaluation: N = 3 documents, avgdl = 2, "apple" in two of them.
    #[test]
    fn toy_corpus_matches_hand_formula() {
        let corpora = [corpus("a", "apple banana"), corpus("b", "Apple cherry cherry"), corpus("c", "date")];
        let m = bm25_score_matrix(&corpora, &Bm25Config::default()).unwrap();

        let idf_apple = (1.0f64 + (3.0 - 2.0 + 0.5) / (2.0 + 0.5)).ln();
        let idf_single = (1.0f64 + (3.0 - 1.0 + 0.5) / (1.0 + 0.5)).ln();
        let tf_part = |tf: f64, dl: f64| tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * dl / 2.0));

        assert_abs_diff_eq!(m[(0, 1)], idf_apple * tf_part(1.0, 3.0), epsilon = 1e-12);
        assert_abs_diff_eq!(m[(0, 1)], 0.390192, epsilon = 1e-6);
        assert_abs_diff_eq!(m[(0, 0)], idf_apple * tf_part(1.0, 2.0) + idf_single * tf_part(1.0, 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(m[(1, 1)], idf_apple * tf_part(1.0, 3.0) + idf_single * tf_part(2.0, 3.0), epsilon = 1e-12);
        // no shared terms
        assert_eq!(m[(0, 2)], 0.0);
        assert_eq!(m[(2, 0)], 0.0);
    }

    #[test]
    fn self_match_dominates_for_equal_lengths() {
        let corpora = [corpus("a", "alpha beta gamma"), corpus("b", "alpha beta gamma"), corpus("c", "alpha delta eps")];
        let m = bm25_score_matrix(&corpora, &Bm25Config::default()).unwrap();
        assert_eq!(m[(0, 0)], m[(0, 1)]);
        assert!(m[(0, 1)] > m[(0, 2)]);
    }

    #[test]
    fn symmetrize_and_errors() {
        let corpora = [corpus("a", "x y"), corpus("b", "x z z z")];
        let cfg = Bm25Config { symmetrize: true, ..Default::default() };
        let m = bm25_score_matrix(&corpora, &cfg).unwrap();
        assert_eq!(m[(0, 1)], m[(1, 0)]);
        let bad = [corpus("a", "x"), corpus("b", "!!")];
        assert!(matches!(bm25_score_matrix(&bad, &Bm25Config::default()), Err(BentoError::EmptyCorpus(ref t)) if t == "b"));
        let cfg = Bm25Config { b: 2.0, ..Default::default() };
        assert!(bm25_score_matrix(&corpora, &cfg).is_err());
        let a = bm25_matrix(&corpora, &Bm25Config::default()).unwrap();
        assert_eq!(a.normalization(), Normalization::Raw);
    }
}
