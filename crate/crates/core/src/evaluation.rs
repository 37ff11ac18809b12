//! Fidelity of a reduced benchmark: predicted vs. full scores, NRMSE and
//! bootstrap error bars over models.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BentoError, Result};
use crate::ict::{index_tasks, TaskId};
use crate::seed::rng_for;

/// Row label carrying per-task example counts in the performance CSV.
pub const EXAMPLE_COUNT_ROW: &str = "#n_examples";

pub const DEFAULT_RESAMPLES: usize = 1000;

/// Largest model count for exhaustive bootstrap enumeration (T^T outcomes).
pub const EXHAUSTIVE_MAX_MODELS: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceTable {
    pub models: Vec<String>,
    pub tasks: Vec<TaskId>,
    /// models x tasks
    pub values: DMatrix<f64>,
    pub example_counts: Option<Vec<u64>>,
}

impl PerformanceTable {
    pub fn new(models: Vec<String>, tasks: Vec<TaskId>, values: DMatrix<f64>, example_counts: Option<Vec<u64>>) -> Result<Self> {
        if models.is_empty() {
            return Err(BentoError::InvalidArgument("performance table needs at least one model".into()));
        }
        if values.nrows() != models.len() || values.ncols() != tasks.len() {
            return Err(BentoError::Shape(format!(
                "{} models x {} tasks but values are {}x{}",
                models.len(),
                tasks.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        index_tasks(&tasks)?;
        for i in 0..values.nrows() {
            for j in 0..values.ncols() {
                if !values[(i, j)].is_finite() {
                    return Err(BentoError::NonFinite { row: i, col: j });
                }
            }
        }
        if let Some(c) = &example_counts {
            if c.len() != tasks.len() {
                return Err(BentoError::Shape(format!("{} example counts for {} tasks", c.len(), tasks.len())));
            }
        }
        Ok(Self { models, tasks, values, example_counts })
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn task_indices(&self, subset: &[TaskId]) -> Result<Vec<usize>> {
        let idx = index_tasks(&self.tasks)?;
        subset
            .iter()
            .map(|t| idx.get(t).copied().ok_or_else(|| BentoError::UnknownTask(t.to_string())))
            .collect()
    }

    /// CSV: header `model,<task...>`, one row per model, optional `#n_examples` row.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers()?.clone();
        let tasks = header.iter().skip(1).map(TaskId::new).collect::<Result<Vec<_>>>()?;
        let mut models = Vec::new();
        let mut flat = Vec::new();
        let mut counts = None;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != tasks.len() + 1 {
                return Err(BentoError::Parse(format!("performance row {} has {} fields", line + 1, rec.len())));
            }
            let parse = |j: usize| -> Result<f64> {
                rec[j + 1]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| BentoError::Parse(format!("row {} column {}: {e}", line + 1, j + 1)))
            };
            if &rec[0] == EXAMPLE_COUNT_ROW {
                counts = Some(
                    (0..tasks.len())
                        .map(|j| {
                            rec[j + 1]
                                .trim()
                                .parse::<u64>()
                                .map_err(|e| BentoError::Parse(format!("example count column {}: {e}", j + 1)))
                        })
                        .collect::<Result<Vec<_>>>()?,
                );
                continue;
            }
            models.push(rec[0].to_string());
            for j in 0..tasks.len() {
                flat.push(parse(j)?);
            }
        }
        let values = DMatrix::from_row_slice(models.len(), tasks.len(), &flat);
        Self::new(models, tasks, values, counts)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["model".to_string()];
        header.extend(self.tasks.iter().map(|t| t.to_string()));
        out.write_record(&header)?;
        for (i, m) in self.models.iter().enumerate() {
            let mut row = vec![m.clone()];
            row.extend((0..self.tasks.len()).map(|j| format!("{:?}", self.values[(i, j)])));
            out.write_record(&row)?;
        }
        if let Some(c) = &self.example_counts {
            let mut row = vec![EXAMPLE_COUNT_ROW.to_string()];
            row.extend(c.iter().map(u64::to_string));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    /// Weighted by per-task example counts.
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NrmseVariant {
    /// `sqrt(sum (p - t)^2 / sum t)`
    #[default]
    AsPrinted,
    /// `sqrt(sum (p - t)^2 / sum t^2)`
    Rms,
}

/// Per-model score on a task subset (indices into the table's tasks).
pub fn predict_indices(table: &PerformanceTable, subset: &[usize], averaging: Averaging) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(BentoError::InvalidArgument("task subset is empty".into()));
    }
    let weights: Vec<f64> = match averaging {
        Averaging::Macro => vec![1.0; subset.len()],
        Averaging::Micro => {
            let counts = table.example_counts.as_ref().ok_or(BentoError::MissingExampleCounts)?;
            subset.iter().map(|&j| counts[j] as f64).collect()
        }
    };
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(BentoError::InvalidArgument("selected tasks have no examples".into()));
    }
    Ok((0..table.n_models())
        .map(|m| subset.iter().zip(&weights).map(|(&j, w)| w * table.values[(m, j)]).sum::<f64>() / total)
        .collect())
}

pub fn predict_performance(table: &PerformanceTable, subset: &[TaskId], averaging: Averaging) -> Result<Vec<f64>> {
    predict_indices(table, &table.task_indices(subset)?, averaging)
}

/// Full-benchmark score of each model.
pub fn full_performance(table: &PerformanceTable, averaging: Averaging) -> Result<Vec<f64>> {
    predict_indices(table, &(0..table.tasks.len()).collect::<Vec<_>>(), averaging)
}

pub fn nrmse(predicted: &[f64], truth: &[f64], variant: NrmseVariant) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(BentoError::Shape(format!("{} predictions for {} targets", predicted.len(), truth.len())));
    }
    let sq: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let denom: f64 = match variant {
        NrmseVariant::AsPrinted => truth.iter().sum(),
        NrmseVariant::Rms => truth.iter().map(|t| t * t).sum(),
    };
    if !(denom > 0.0) {
        return Err(BentoError::NonPositiveDenominator(denom));
    }
    Ok((sq / denom).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapStats {
    pub mean: f64,
    /// Population standard deviation over resamples.
    pub std: f64,
    pub resamples: usize,
    /// Resamples drawn again because their ground-truth sum was not positive.
    pub redrawn: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn resampled_nrmse(predicted: &[f64], truth: &[f64], draw: &[usize], variant: NrmseVariant) -> Result<f64> {
    let p: Vec<f64> = draw.iter().map(|&i| predicted[i]).collect();
    let t: Vec<f64> = draw.iter().map(|&i| truth[i]).collect();
    nrmse(&p, &t, variant)
}

/// Bootstrap over models: each resample draws T models with replacement.
/// Resample `r` uses its own seeded stream, so results do not depend on
/// scheduling.
pub fn bootstrap_nrmse(predicted: &[f64], truth: &[f64], resamples: usize, seed: u64, variant: NrmseVariant) -> Result<BootstrapStats> {
    const MAX_REDRAWS: usize = 1000;
    let t = truth.len();
    if t == 0 || predicted.len() != t {
        return Err(BentoError::Shape(format!("{} predictions for {t} targets", predicted.len())));
    }
    if resamples == 0 {
        return Err(BentoError::InvalidArgument("resamples must be >= 1".into()));
    }
    let outcomes = (0..resamples)
        .into_par_iter()
        .map(|r| {
            for attempt in 0..MAX_REDRAWS {
                let mut rng = rng_for(seed, &format!("bootstrap/{r}/{attempt}"));
                let draw: Vec<usize> = (0..t).map(|_| rng.random_range(0..t)).collect();
                match resampled_nrmse(predicted, truth, &draw, variant) {
                    Ok(v) => return Ok((v, attempt)),
                    Err(BentoError::NonPositiveDenominator(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(BentoError::NonPositiveDenominator(0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let redrawn: usize = outcomes.iter().map(|(_, a)| a).sum();
    if redrawn > 0 {
        log::info!("bootstrap redrew {redrawn} degenerate resamples");
    }
    let values: Vec<f64> = outcomes.into_iter().map(|(v, _)| v).collect();
    let (mean, std) = mean_std(&values);
    Ok(BootstrapStats { mean, std, resamples, redrawn })
}

/// Exact bootstrap moments by enumerating all T^T ordered resamples; the
/// sampled estimator converges to this.
pub fn bootstrap_nrmse_exhaustive(predicted: &[f64], truth: &[f64], variant: NrmseVariant) -> Result<BootstrapStats> {
    let t = truth.len();
    if t == 0 || predicted.len() != t {
        return Err(BentoError::Shape(format!("{} predictions for {t} targets", predicted.len())));
    }
    if t > EXHAUSTIVE_MAX_MODELS {
        return Err(BentoError::InvalidArgument(format!("exhaustive bootstrap supports at most {EXHAUSTIVE_MAX_MODELS} models")));
    }
    let total = t.pow(t as u32);
    let mut values = Vec::with_capacity(total);
    let mut skipped = 0;
    for code in 0..total {
        let draw: Vec<usize> = (0..t).map(|pos| (code / t.pow(pos as u32)) % t).collect();
        match resampled_nrmse(predicted, truth, &draw, variant) {
            Ok(v) => values.push(v),
            Err(BentoError::NonPositiveDenominator(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(BentoError::NonPositiveDenominator(0.0));
    }
    let (mean, std) = mean_std(&values);
    Ok(BootstrapStats { mean, std, resamples: values.len(), redrawn: skipped })
}

/// Per task, keeps `ceil(fraction * n)` example indices drawn uniformly
/// without replacement, returned in ascending order.
pub fn subsample_indices(counts: &[(TaskId, usize)], fraction: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(BentoError::InvalidArgument(format!("fraction must be in (0, 1], got {fraction}")));
    }
    counts
        .iter()
        .map(|(task, n)| {
            if *n == 0 {
                return Err(BentoError::EmptyTask(task.to_string()));
            }
            let x = fraction * *n as f64;
            let keep = ((x - 1e-9 * x).ceil() as usize).clamp(1, *n);
            let mut rng = rng_for(seed, &format!("examples/{task}"));
            let mut idx = index::sample(&mut rng, *n, keep).into_vec();
            idx.sort_unstable();
            Ok(idx)
        })
        .collect()
}

pub fn subsample_examples<T: Clone>(tasks: &[(TaskId, Vec<T>)], fraction: f64, seed: u64) -> Result<Vec<(TaskId, Vec<T>)>> {
    let counts: Vec<(TaskId, usize)> = tasks.iter().map(|(t, v)| (t.clone(), v.len())).collect();
    let picks = subsample_indices(&counts, fraction, seed)?;
    Ok(tasks
        .iter()
        .zip(picks)
        .map(|((t, v), idx)| (t.clone(), idx.into_iter().map(|i| v[i].clone()).collect()))
        .collect())
}

/// Example-level scores, `scores[model][task][example]`, for studies that
/// combine example subsampling with task selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleScoreTable {
    pub models: Vec<String>,
    pub tasks: Vec<TaskId>,
    pub scores: Vec<Vec<Vec<f64>>>,
}

impl ExampleScoreTable {
    pub fn example_counts(&self) -> Vec<(TaskId, usize)> {
        self.tasks
            .iter()
            .enumerate()
            .map(|(j, t)| (t.clone(), self.scores.first().map_or(0, |m| m[j].len())))
            .collect()
    }

    /// Per-task mean scores, optionally over a subset of example indices.
    pub fn to_performance(&self, keep: Option<&[Vec<usize>]>) -> Result<PerformanceTable> {
        let t = self.models.len();
        let n = self.tasks.len();
        let mut values = DMatrix::zeros(t, n);
        let mut counts = vec![0u64; n];
        for (m, per_task) in self.scores.iter().enumerate() {
            if per_task.len() != n {
                return Err(BentoError::Shape(format!("model {} has {} tasks", self.models[m], per_task.len())));
            }
            for (j, ex) in per_task.iter().enumerate() {
                let picked: Vec<f64> = match keep {
                    Some(k) => k[j].iter().map(|&i| ex[i]).collect(),
                    None => ex.clone(),
                };
                if picked.is_empty() {
                    return Err(BentoError::EmptyTask(self.tasks[j].to_string()));
                }
                values[(m, j)] = picked.iter().sum::<f64>() / picked.len() as f64;
                counts[j] = picked.len() as u64;
            }
        }
        PerformanceTable::new(self.models.clone(), self.tasks.clone(), values, Some(counts))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub averaging: Averaging,
    pub variant: NrmseVariant,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { averaging: Averaging::Macro, variant: NrmseVariant::AsPrinted, resamples: DEFAULT_RESAMPLES, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    /// Empty when the report averages several random subsets.
    pub subset: Vec<TaskId>,
    pub models: Vec<String>,
    pub predicted: Vec<f64>,
    pub truth: Vec<f64>,
    pub nrmse: f64,
    /// Bootstrap over models for one subset; spread over subsets when `trials > 1`.
    pub bootstrap_mean: f64,
    pub bootstrap_std: f64,
    pub averaging: Averaging,
    pub variant: NrmseVariant,
    pub trials: usize,
}

pub fn evaluate_subset(table: &PerformanceTable, subset: &[TaskId], opts: &EvalOptions) -> Result<EvalReport> {
    let idx = table.task_indices(subset)?;
    let truth = full_performance(table, opts.averaging)?;
    let predicted = predict_indices(table, &idx, opts.averaging)?;
    let value = nrmse(&predicted, &truth, opts.variant)?;
    let boot = bootstrap_nrmse(&predicted, &truth, opts.resamples, opts.seed, opts.variant)?;
    Ok(EvalReport {
        k: subset.len(),
        subset: subset.to_vec(),
        models: table.models.clone(),
        predicted,
        truth,
        nrmse: value,
        bootstrap_mean: boot.mean,
        bootstrap_std: boot.std,
        averaging: opts.averaging,
        variant: opts.variant,
        trials: 1,
    })
}

/// Mean NRMSE over many subsets of the same size (the random baseline).
pub fn evaluate_subsets(table: &PerformanceTable, subsets: &[Vec<TaskId>], opts: &EvalOptions) -> Result<EvalReport> {
    let Some(first) = subsets.first() else {
        return Err(BentoError::InvalidArgument("no subsets to evaluate".into()));
    };
    if subsets.len() == 1 {
        return evaluate_subset(table, first, opts);
    }
    let truth = full_performance(table, opts.averaging)?;
    let per: Vec<(Vec<f64>, f64)> = subsets
        .par_iter()
        .map(|s| {
            let p = predict_indices(table, &table.task_indices(s)?, opts.averaging)?;
            let v = nrmse(&p, &truth, opts.variant)?;
            Ok((p, v))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = per.iter().map(|(_, v)| *v).collect();
    let (mean, std) = mean_std(&values);
    let t = table.n_models();
    let predicted = (0..t).map(|m| per.iter().map(|(p, _)| p[m]).sum::<f64>() / per.len() as f64).collect();
    Ok(EvalReport {
        k: first.len(),
        subset: Vec::new(),
        models: table.models.clone(),
        predicted,
        truth,
        nrmse: mean,
        bootstrap_mean: mean,
        bootstrap_std: std,
        averaging: opts.averaging,
        variant: opts.variant,
        trials: subsets.len(),
    })
}

/// About 18% of the benchmark: 10 of 57 tasks, 12 of 66.
pub fn default_k_max(n_tasks: usize) -> usize {
    ((0.18 * n_tasks as f64).round() as usize).clamp(1, n_tasks.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub method: String,
    pub reports: Vec<EvalReport>,
    pub best_k: usize,
    pub best: f64,
}

/// Runs `selector(k)` for k = 1..=k_max and scores each selection.
/// The selector returns one subset, or many for randomized baselines.
pub fn sweep_k<F>(table: &PerformanceTable, method: &str, k_max: usize, opts: &EvalOptions, mut selector: F) -> Result<SweepReport>
where
    F: FnMut(usize) -> Result<Vec<Vec<TaskId>>>,
{
    let n = table.tasks.len();
    if k_max == 0 || k_max > n {
        return Err(BentoError::InvalidArgument(format!("k_max must be in 1..={n}, got {k_max}")));
    }
    let mut reports = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let subsets = selector(k)?;
        reports.push(evaluate_subsets(table, &subsets, opts)?);
    }
    if reports.iter().any(|r| r.trials > 1) && reports.windows(2).any(|w| w[1].nrmse > w[0].nrmse) {
        log::info!("{method}: mean NRMSE is not monotone in k");
    }
    let (best_k, best) = reports
        .iter()
        .map(|r| (r.k, r.nrmse))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    Ok(SweepReport { method: method.to_string(), reports, best_k, best })
}

/// Plain-text grid: one row per method, `Best` then one column per k.
pub fn render_sweep_table(sweeps: &[SweepReport]) -> String {
    let k_max = sweeps.iter().map(|s| s.reports.len()).max().unwrap_or(0);
    let width = sweeps.iter().map(|s| s.method.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}  {:>7}", "Method", "Best");
    for k in 1..=k_max {
        let _ = write!(out, "  {:>7}", format!("k={k}"));
    }
    out.push('\n');
    for s in sweeps {
        let _ = write!(out, "{:<width$}  {:>7.3}", s.method, s.best);
        for r in &s.reports {
            let _ = write!(out, "  {:>7.3}", r.nrmse);
        }
        out.push('\n');
    }
    out
}
