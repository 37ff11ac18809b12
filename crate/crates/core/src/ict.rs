//! In-context transferability (ICT) matrices.
//!
//! Entry `(i, j)` estimates how much task `i`'s exemplars help when answering
//! task `j`'s questions. Rows are sources, columns are targets, and after
//! column normalization each row doubles as an embedding of its task.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{BentoError, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TaskId(String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(BentoError::InvalidTaskId(id));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for TaskId {
    type Error = BentoError;
    fn try_from(s: String) -> Result<Self> {
        TaskId::new(s)
    }
}

impl From<TaskId> for String {
    fn from(t: TaskId) -> String {
        t.0
    }
}

impl AsRef<str> for TaskId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Checks a task list for emptiness and duplicates and returns an index map.
pub fn index_tasks(tasks: &[TaskId]) -> Result<HashMap<&TaskId, usize>> {
    let mut idx = HashMap::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        if idx.insert(t, i).is_some() {
            return Err(BentoError::DuplicateTask(t.to_string()));
        }
    }
    Ok(idx)
}

/// One scored transfer-ICL trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub source: TaskId,
    pub target: TaskId,
    pub seed: u64,
    pub question_id: String,
    pub score: f64,
}

/// Whether larger raw scores mean better transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDirection {
    #[default]
    HigherIsBetter,
    /// Scores such as perplexity; negated on ingestion.
    LowerIsBetter,
}

/// Reads newline-delimited JSON records. Blank lines are skipped.
pub fn read_records_jsonl<R: BufRead>(r: R, direction: ScoreDirection) -> Result<Vec<TransferRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: TransferRecord = serde_json::from_str(&line)
            .map_err(|e| BentoError::Parse(format!("record line {}: {e}", lineno + 1)))?;
        if direction == ScoreDirection::LowerIsBetter {
            rec.score = -rec.score;
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records_jsonl<W: Write>(mut w: W, records: &[TransferRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    Centered,
    Zscored,
}

impl Normalization {
    fn name(self) -> &'static str {
        match self {
            Normalization::Raw => "raw",
            Normalization::Centered => "centered",
            Normalization::Zscored => "zscored",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Mean over questions within each seed, then mean over seeds.
    #[default]
    PerSeed,
    /// Plain mean over every record of the pair.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPairPolicy {
    #[default]
    Error,
    /// Fill absent cells with the mean of the observed cells in that column.
    ImputeColumnMean,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct AggregateOptions {
    pub mode: AggregationMode,
    pub missing: MissingPairPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IctMatrix {
    tasks: Vec<TaskId>,
    values: DMatrix<f64>,
    normalization: Normalization,
}

/// Sidecar metadata stored next to an ICT matrix CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IctMeta {
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl IctMatrix {
    pub fn new(tasks: Vec<TaskId>, values: DMatrix<f64>, normalization: Normalization) -> Result<Self> {
        if tasks.len() < 2 {
            return Err(BentoError::TooFewTasks { min: 2, got: tasks.len() });
        }
        if values.nrows() != tasks.len() || values.ncols() != tasks.len() {
            return Err(BentoError::Shape(format!(
                "{} tasks but matrix is {}x{}",
                tasks.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        index_tasks(&tasks)?;
        Ok(Self { tasks, values, normalization })
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, source: usize, target: usize) -> f64 {
        self.values[(source, target)]
    }

    /// Averages transfer records into a raw matrix over `tasks`.
    ///
    /// Records naming tasks outside `tasks` are ignored. The result does not
    /// depend on record order.
    pub fn aggregate(records: &[TransferRecord], tasks: &[TaskId], opts: AggregateOptions) -> Result<Self> {
        if tasks.len() < 2 {
            return Err(BentoError::TooFewTasks { min: 2, got: tasks.len() });
        }
        let index = index_tasks(tasks)?;
        let n = tasks.len();

        // cell -> seed -> question -> score; ordered maps fix the summation order
        let mut cells: BTreeMap<(usize, usize), BTreeMap<u64, BTreeMap<&str, f64>>> = BTreeMap::new();
        let mut skipped = 0usize;
        for r in records {
            let (Some(&i), Some(&j)) = (index.get(&r.source), index.get(&r.target)) else {
                skipped += 1;
                continue;
            };
            if !r.score.is_finite() {
                return Err(BentoError::NonFiniteScore {
                    source_task: r.source.to_string(),
                    target: r.target.to_string(),
                    seed: r.seed,
                    question_id: r.question_id.clone(),
                    score: r.score,
                });
            }
            let prev = cells
                .entry((i, j))
                .or_default()
                .entry(r.seed)
                .or_default()
                .insert(r.question_id.as_str(), r.score);
            if prev.is_some() {
                return Err(BentoError::DuplicateRecord {
                    source_task: r.source.to_string(),
                    target: r.target.to_string(),
                    seed: r.seed,
                    question_id: r.question_id.clone(),
                });
            }
        }
        if skipped > 0 {
            log::debug!("ignored {skipped} records for tasks outside the task list");
        }

        let mut values = DMatrix::from_element(n, n, f64::NAN);
        for (&(i, j), seeds) in &cells {
            values[(i, j)] = match opts.mode {
                AggregationMode::PerSeed => {
                    let per_seed: Vec<f64> = seeds.values().map(|qs| mean(qs.values().copied())).collect();
                    mean(per_seed.into_iter())
                }
                AggregationMode::Flat => mean(seeds.values().flat_map(|qs| qs.values().copied())),
            };
        }

        let missing: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| values[(i, j)].is_nan())
            .collect();
        if !missing.is_empty() {
            match opts.missing {
                MissingPairPolicy::Error => {
                    return Err(BentoError::MissingPairs(
                        missing
                            .iter()
                            .map(|&(i, j)| (tasks[i].to_string(), tasks[j].to_string()))
                            .collect(),
                    ));
                }
                MissingPairPolicy::ImputeColumnMean => {
                    let missing_set: HashSet<(usize, usize)> = missing.iter().copied().collect();
                    for j in 0..n {
                        let observed: Vec<f64> = (0..n)
                            .filter(|&i| !missing_set.contains(&(i, j)))
                            .map(|i| values[(i, j)])
                            .collect();
                        if observed.is_empty() {
                            return Err(BentoError::MissingPairs(
                                (0..n).map(|i| (tasks[i].to_string(), tasks[j].to_string())).collect(),
                            ));
                        }
                        let fill = mean(observed.into_iter());
                        for i in 0..n {
                            if missing_set.contains(&(i, j)) {
                                log::warn!("imputing missing pair ({}, {}) with column mean {fill}", tasks[i], tasks[j]);
                                values[(i, j)] = fill;
                            }
                        }
                    }
                }
            }
        }

        Self::new(tasks.to_vec(), values, Normalization::Raw)
    }

    /// Subtracts each column's mean, removing target-task difficulty.
    pub fn center_columns(&self) -> Result<Self> {
        self.require_raw()?;
        let mut values = self.values.clone();
        for mut col in values.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        Ok(Self { tasks: self.tasks.clone(), values, normalization: Normalization::Centered })
    }

    /// Centers each column and divides by its population standard deviation.
    pub fn zscore_columns(&self) -> Result<Self> {
        self.require_raw()?;
        let n = self.len() as f64;
        let mut values = self.values.clone();
        for (j, mut col) in values.column_iter_mut().enumerate() {
            let m = col.mean();
            col.add_scalar_mut(-m);
            let sd = (col.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
            if sd == 0.0 || !sd.is_finite() {
                return Err(BentoError::ZeroVariance(self.tasks[j].to_string()));
            }
            col.unscale_mut(sd);
        }
        Ok(Self { tasks: self.tasks.clone(), values, normalization: Normalization::Zscored })
    }

    fn require_raw(&self) -> Result<()> {
        match self.normalization {
            Normalization::Raw => Ok(()),
            other => Err(BentoError::AlreadyNormalized(other.name())),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        io::write_matrix_csv(w, &self.tasks, &self.values)
    }

    /// Writes `path` and its `.meta.json` sidecar.
    pub fn save(&self, path: &Path, config_digest: Option<&str>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))?;
        io::write_json(
            &io::sidecar_path(path),
            &IctMeta { normalization: self.normalization, config_digest: config_digest.map(str::to_string) },
        )
    }

    /// Loads a matrix CSV. Without a sidecar the matrix is taken as raw.
    pub fn load(path: &Path) -> Result<Self> {
        let (tasks, values) = io::read_matrix_csv(std::io::BufReader::new(std::fs::File::open(path)?))?;
        let meta = io::sidecar_path(path);
        let normalization = if meta.exists() {
            io::read_json::<IctMeta>(&meta)?.normalization
        } else {
            Normalization::Raw
        };
        Self::new(tasks, values, normalization)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn t(s: &str) -> TaskId {
        TaskId::new(s).unwrap()
    }

    fn rec(s: &str, tg: &str, seed: u64, q: &str, score: f64) -> TransferRecord {
        TransferRecord { source: t(s), target: t(tg), seed, question_id: q.into(), score }
    }

    fn raw(rows: &[&[f64]]) -> IctMatrix {
        let n = rows.len();
        let tasks = (0..n).map(|i| t(&format!("t{i}"))).collect();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        IctMatrix::new(tasks, DMatrix::from_row_slice(n, n, &flat), Normalization::Raw).unwrap()
    }

    fn full_grid(score: f64) -> Vec<TransferRecord> {
        let mut v = Vec::new();
        for s in ["a", "b"] {
            for tg in ["a", "b"] {
                v.push(rec(s, tg, 1, "q", score));
            }
        }
        v
    }

    #[test]
    fn two_level_mean() {
        let mut records = full_grid(0.0);
        records.retain(|r| !(r.source.as_str() == "a" && r.target.as_str() == "b"));
        records.extend([
            rec("a", "b", 1, "q1", 1.0),
            rec("a", "b", 1, "q2", 0.0),
            rec("a", "b", 2, "q1", 1.0),
            rec("a", "b", 2, "q2", 1.0),
        ]);
        let m = IctMatrix::aggregate(&records, &[t("a"), t("b")], AggregateOptions::default()).unwrap();
        assert_eq!(m.get(0, 1), 0.75);
        assert_eq!(m.normalization(), Normalization::Raw);
    }

    #[test]
    fn flat_mean_differs_when_seed_sizes_differ() {
        let mut records = full_grid(0.0);
        records.retain(|r| !(r.source.as_str() == "a" && r.target.as_str() == "b"));
        records.extend([
            rec("a", "b", 1, "q1", 1.0),
            rec("a", "b", 2, "q1", 0.0),
            rec("a", "b", 2, "q2", 0.0),
        ]);
        let tasks = [t("a"), t("b")];
        let per_seed = IctMatrix::aggregate(&records, &tasks, AggregateOptions::default()).unwrap();
        let flat = IctMatrix::aggregate(
            &records,
            &tasks,
            AggregateOptions { mode: AggregationMode::Flat, ..Default::default() },
        )
        .unwrap();
        assert_eq!(per_seed.get(0, 1), 0.5);
        assert_abs_diff_eq!(flat.get(0, 1), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_input() {
        let m = IctMatrix::aggregate(&full_grid(0.4), &[t("a"), t("b")], AggregateOptions::default()).unwrap();
        assert!(m.values().iter().all(|&x| x == 0.4));
    }

    #[test]
    fn identical_seeds() {
        let mut records = full_grid(0.0);
        records.extend([rec("b", "a", 7, "q", 0.5), rec("b", "a", 8, "q", 0.5)]);
        records.retain(|r| !(r.source.as_str() == "b" && r.target.as_str() == "a" && r.seed == 1));
        let m = IctMatrix::aggregate(&records, &[t("a"), t("b")], AggregateOptions::default()).unwrap();
        assert_eq!(m.get(1, 0), 0.5);
    }

    #[test]
    fn missing_pair_is_reported() {
        let mut records = full_grid(1.0);
        records.pop();
        let err = IctMatrix::aggregate(&records, &[t("a"), t("b")], AggregateOptions::default()).unwrap_err();
        match err {
            BentoError::MissingPairs(p) => assert_eq!(p, vec![("b".to_string(), "b".to_string())]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_pair_imputed_with_column_mean() {
        let records = vec![
            rec("a", "a", 1, "q", 1.0),
            rec("b", "a", 1, "q", 0.0),
            rec("c", "a", 1, "q", 0.5),
            rec("a", "b", 1, "q", 0.2),
            rec("b", "b", 1, "q", 0.4),
            rec("a", "c", 1, "q", 0.1),
            rec("b", "c", 1, "q", 0.1),
            rec("c", "c", 1, "q", 0.1),
        ];
        let opts = AggregateOptions { missing: MissingPairPolicy::ImputeColumnMean, ..Default::default() };
        let m = IctMatrix::aggregate(&records, &[t("a"), t("b"), t("c")], opts).unwrap();
        assert_abs_diff_eq!(m.get(2, 1), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_score_is_rejected() {
        let mut records = full_grid(1.0);
        records[2].score = f64::NAN;
        assert!(matches!(
            IctMatrix::aggregate(&records, &[t("a"), t("b")], AggregateOptions::default()),
            Err(BentoError::NonFiniteScore { .. })
        ));
    }

    #[test]
    fn duplicate_record_is_rejected() {
        let mut records = full_grid(1.0);
        records.push(records[0].clone());
        assert!(matches!(
            IctMatrix::aggregate(&records, &[t("a"), t("b")], AggregateOptions::default()),
            Err(BentoError::DuplicateRecord { .. })
        ));
    }

    #[test]
    fn centering_hand_example() {
        let c = raw(&[&[1.0, 2.0], &[3.0, 4.0]]).center_columns().unwrap();
        assert_eq!(c.values(), &DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, 1.0]));
        assert_eq!(c.normalization(), Normalization::Centered);
        assert!(matches!(c.center_columns(), Err(BentoError::AlreadyNormalized("centered"))));
        assert!(matches!(c.zscore_columns(), Err(BentoError::AlreadyNormalized("centered"))));
    }

    #[test]
    fn centering_fixed_point_and_constant_column() {
        let c = raw(&[&[-1.0, 5.0], &[1.0, 5.0]]).center_columns().unwrap();
        assert_eq!(c.values(), &DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn zscore_examples() {
        let z = raw(&[&[1.0, 0.0], &[3.0, 0.0]]);
        assert!(matches!(z.zscore_columns(), Err(BentoError::ZeroVariance(ref s)) if s == "t1"));

        let z = raw(&[&[1.0, 5.0], &[3.0, 6.0]]).zscore_columns().unwrap();
        assert_eq!(z.get(0, 0), -1.0);
        assert_eq!(z.get(1, 0), 1.0);

        let z = raw(&[&[0.0, 0.0, 1.0], &[2.0, 1.0, 0.0], &[4.0, 0.0, 0.0]]).zscore_columns().unwrap();
        let s = (8.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(z.get(0, 0), -2.0 / s, epsilon = 1e-12);
        assert_abs_diff_eq!(z.get(0, 0), -1.2247, epsilon = 1e-4);
        assert_abs_diff_eq!(z.get(1, 0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(z.get(2, 0), 1.2247, epsilon = 1e-4);
        for j in 0..3 {
            let col = z.values().column(j);
            assert_abs_diff_eq!(col.mean(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(col.iter().map(|x| x * x).sum::<f64>() / 3.0, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_duplicates_and_small_task_lists() {
        let m = DMatrix::zeros(2, 2);
        assert!(matches!(
            IctMatrix::new(vec![t("a"), t("a")], m.clone(), Normalization::Raw),
            Err(BentoError::DuplicateTask(_))
        ));
        assert!(matches!(
            IctMatrix::new(vec![t("a")], DMatrix::zeros(1, 1), Normalization::Raw),
            Err(BentoError::TooFewTasks { .. })
        ));
        assert!(TaskId::new("  ").is_err());
    }

    #[test]
    fn lower_is_better_scores_are_negated() {
        let text = r#"{"source":"a","target":"b","seed":1,"question_id":"q","score":2.5}"#;
        let r = read_records_jsonl(text.as_bytes(), ScoreDirection::LowerIsBetter).unwrap();
        assert_eq!(r[0].score, -2.5);
    }

    #[test]
    fn save_and_load_keep_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let c = raw(&[&[1.0, 2.0], &[3.0, 4.5]]).center_columns().unwrap();
        c.save(&p, Some("abc")).unwrap();
        assert_eq!(IctMatrix::load(&p).unwrap(), c);
    }

    fn random_matrix(n: usize, seed: u64) -> IctMatrix {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tasks = (0..n).map(|i| t(&format!("t{i}"))).collect();
        let v = DMatrix::from_fn(n, n, |_, _| rng.random_range(-3.0..3.0));
        IctMatrix::new(tasks, v, Normalization::Raw).unwrap()
    }

    proptest! {
        #[test]
        fn centered_columns_have_zero_mean(n in 2usize..12, seed in any::<u64>()) {
            let m = random_matrix(n, seed);
            let c = m.center_columns().unwrap();
            let scale = m.values().amax().max(1.0);
            for j in 0..n {
                prop_assert!(c.values().column(j).mean().abs() < 1e-12 * scale * n as f64);
            }
        }

        #[test]
        fn column_offsets_vanish_after_centering(n in 2usize..8, seed in any::<u64>(), shift in -5.0f64..5.0, col in 0usize..8) {
            let m = random_matrix(n, seed);
            let col = col % n;
            let mut shifted = m.values().clone();
            shifted.column_mut(col).add_scalar_mut(shift);
            let shifted = IctMatrix::new(m.tasks().to_vec(), shifted, Normalization::Raw).unwrap();
            let a = m.center_columns().unwrap();
            let b = shifted.center_columns().unwrap();
            for (x, y) in a.values().iter().zip(b.values().iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn aggregation_ignores_record_order(seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let tasks = [t("a"), t("b"), t("c")];
            let mut records = Vec::new();
            for s in &tasks {
                for tg in &tasks {
                    for m in 0..3u64 {
                        for q in 0..rng.random_range(1..4) {
                            records.push(TransferRecord {
                                source: s.clone(), target: tg.clone(), seed: m,
                                question_id: format!("q{q}"), score: rng.random(),
                            });
                        }
                    }
                }
            }
            let a = IctMatrix::aggregate(&records, &tasks, AggregateOptions::default()).unwrap();
            records.shuffle(&mut rng);
            let b = IctMatrix::aggregate(&records, &tasks, AggregateOptions::default()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
