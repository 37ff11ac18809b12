//! Facility-location task selection.
//!
//! `f(X) = sum_i max_{j in X} S[i][j]`, with `f({}) = 0`. For non-negative
//! `S` the function is monotone submodular and greedy selection is within
//! `1 - 1/e` of the optimum.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Method, SelectionResult};
use crate::error::{BentoError, Result};
use crate::ict::{index_tasks, TaskId};
use crate::similarity::SimilarityMatrix;

/// Largest task count accepted by [`fl_bruteforce`].
pub const BRUTE_FORCE_MAX_TASKS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreedyStrategy {
    /// Re-evaluates every candidate each step (parallel over candidates).
    Naive,
    /// Priority queue of stale upper bounds; same output as `Naive`.
    #[default]
    Lazy,
}

/// Facility-location value of the subset `x` (indices into `s`).
pub fn fl_value_of(s: &DMatrix<f64>, x: &[usize]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (0..s.nrows())
        .map(|i| x.iter().map(|&j| s[(i, j)]).fold(f64::NEG_INFINITY, f64::max))
        .sum()
}

/// Facility-location value of a subset named by task id, on `s` as given.
pub fn fl_value(s: &SimilarityMatrix, x: &[TaskId]) -> Result<f64> {
    let idx = index_tasks(s.tasks())?;
    let cols = x
        .iter()
        .map(|t| idx.get(t).copied().ok_or_else(|| BentoError::UnknownTask(t.to_string())))
        .collect::<Result<Vec<_>>>()?;
    Ok(fl_value_of(s.values(), &cols))
}

/// `f(X + j) - f(X)` given the per-row cover `cur_i = max_{x in X} S[i][x]` of a non-empty X.
fn gain(s: &DMatrix<f64>, cur: &[f64], j: usize) -> f64 {
    cur.iter().enumerate().map(|(i, &c)| (s[(i, j)] - c).max(0.0)).sum()
}

fn column_sum(s: &DMatrix<f64>, j: usize) -> f64 {
    s.column(j).iter().sum()
}

/// Highest value wins; equal values go to the lowest index.
fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    match a.0.total_cmp(&b.0) {
        Ordering::Greater => a,
        Ordering::Less => b,
        Ordering::Equal => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(BentoError::InvalidArgument(format!("k must be in 1..={n}, got {k}")));
    }
    Ok(())
}

/// Greedy maximization over raw values; returns selection order and `f` after each step.
pub fn greedy_indices(s: &DMatrix<f64>, k: usize, strategy: GreedyStrategy) -> Result<(Vec<usize>, Vec<f64>)> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(BentoError::Shape("similarity matrix must be square".into()));
    }
    check_k(n, k)?;

    // first pick: f({j}) is the column sum
    let first = (0..n)
        .map(|j| (column_sum(s, j), j))
        .reduce(better)
        .expect("n >= 1")
        .1;
    let mut selected = vec![first];
    let mut in_set = vec![false; n];
    in_set[first] = true;
    let mut cur: Vec<f64> = s.column(first).iter().copied().collect();
    let mut trace = vec![cur.iter().sum()];

    let push = |j: usize, selected: &mut Vec<usize>, in_set: &mut Vec<bool>, cur: &mut Vec<f64>, trace: &mut Vec<f64>| {
        selected.push(j);
        in_set[j] = true;
        for (i, c) in cur.iter_mut().enumerate() {
            *c = c.max(s[(i, j)]);
        }
        trace.push(cur.iter().sum());
    };

    match strategy {
        GreedyStrategy::Naive => {
            while selected.len() < k {
                let j = (0..n)
                    .into_par_iter()
                    .filter(|&j| !in_set[j])
                    .map(|j| (gain(s, &cur, j), j))
                    .reduce_with(better)
                    .expect("k <= n leaves a candidate")
                    .1;
                push(j, &mut selected, &mut in_set, &mut cur, &mut trace);
            }
        }
        GreedyStrategy::Lazy => {
            let mut heap: BinaryHeap<Bound> = (0..n)
                .filter(|&j| !in_set[j])
                .map(|j| Bound { gain: gain(s, &cur, j), index: j, step: 1 })
                .collect();
            while selected.len() < k {
                let step = selected.len();
                let top = heap.pop().expect("k <= n leaves a candidate");
                if top.step == step {
                    push(top.index, &mut selected, &mut in_set, &mut cur, &mut trace);
                } else {
                    heap.push(Bound { gain: gain(s, &cur, top.index), index: top.index, step });
                }
            }
        }
    }
    Ok((selected, trace))
}

/// Heap entry ordered by gain, then by lowest index.
#[derive(Debug, Clone, Copy)]
struct Bound {
    gain: f64,
    index: usize,
    /// Selection size at which `gain` was computed.
    step: usize,
}

impl PartialEq for Bound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Bound {}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then_with(|| other.index.cmp(&self.index))
    }
}

/// Exhaustive optimum over all `C(N, k)` subsets; ties go to the
/// lexicographically smallest subset.
pub fn bruteforce_indices(s: &DMatrix<f64>, k: usize) -> Result<(Vec<usize>, f64)> {
    let n = s.nrows();
    if n > BRUTE_FORCE_MAX_TASKS {
        return Err(BentoError::TooLargeForBruteForce { max: BRUTE_FORCE_MAX_TASKS, got: n });
    }
    check_k(n, k)?;
    let mut combo: Vec<usize> = (0..k).collect();
    let mut best = combo.clone();
    let mut best_val = fl_value_of(s, &combo);
    loop {
        // next combination in lexicographic order
        let mut i = k;
        while i > 0 && combo[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        combo[i - 1] += 1;
        for t in i..k {
            combo[t] = combo[t - 1] + 1;
        }
        let v = fl_value_of(s, &combo);
        if v > best_val {
            best_val = v;
            best.clone_from(&combo);
        }
    }
    Ok((best, best_val))
}

/// Greedy facility-location selection. Cosine similarities are shifted by +1
/// first, which leaves the choices unchanged; the trace is on shifted values.
pub fn fl_greedy(s: &SimilarityMatrix, k: usize, strategy: GreedyStrategy) -> Result<SelectionResult> {
    let values = s.selection_values();
    let (idx, trace) = greedy_indices(&values, k, strategy)?;
    Ok(SelectionResult::new(Method::FlGreedy, s.tasks(), &idx, trace, &values).with_similarity(s.kind()))
}

pub fn fl_bruteforce(s: &SimilarityMatrix, k: usize) -> Result<SelectionResult> {
    let values = s.selection_values();
    let (idx, _) = bruteforce_indices(&values, k)?;
    let trace = (1..=idx.len()).map(|m| fl_value_of(&values, &idx[..m])).collect();
    Ok(SelectionResult::new(Method::FlBruteforce, s.tasks(), &idx, trace, &values).with_similarity(s.kind()))
}
