//! Transfer in-context evaluation over a task grid.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use bento_core::ict::{read_records_jsonl, write_records_jsonl, ScoreDirection};
use bento_core::seed::{derive_seed, rng_for};
use bento_core::{TaskId, TransferRecord};

use crate::client::{ApiMode, CompletionBackend, CompletionRequest, EndpointConfig};
use crate::data::TaskData;
use crate::error::{CollectorError, Result};
use crate::prompt::{sample_exemplars, PromptStyle, PromptTemplate};
use crate::scoring::{score_exact_match, score_perplexity};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REPORT_FILE: &str = "completeness.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Option-letter accuracy.
    #[default]
    ExactMatch,
    /// Whole-response equality after trimming.
    StrictMatch,
    /// Mean gold-token logprob under the prompt.
    Perplexity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub model: String,
    pub style: PromptStyle,
    pub scoring: Scoring,
    pub mode: ApiMode,
    /// Exemplars per prompt.
    pub l: usize,
    /// Exemplar resampling seeds, numbered 1..=m.
    pub m: usize,
    /// Per-seed cap on target questions; `None` means the whole test set.
    pub q: Option<usize>,
    /// Defaults to 16 for option-letter scoring and 256 otherwise.
    pub max_tokens: Option<u32>,
    pub root_seed: u64,
    pub max_in_flight: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            model: String::new(),
            style: PromptStyle::Mmlu,
            scoring: Scoring::ExactMatch,
            mode: ApiMode::Completions,
            l: 5,
            m: 10,
            q: None,
            max_tokens: None,
            root_seed: 0,
            max_in_flight: 8,
        }
    }
}

impl CollectConfig {
    pub fn max_tokens(&self) -> u32 {
        self.max_tokens.unwrap_or(match self.scoring {
            Scoring::ExactMatch => 16,
            Scoring::StrictMatch | Scoring::Perplexity => 256,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(CollectorError::Config("m must be >= 1".into()));
        }
        if self.q == Some(0) {
            return Err(CollectorError::Config("q must be >= 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(CollectorError::Config("max_in_flight must be >= 1".into()));
        }
        if self.scoring == Scoring::Perplexity && self.mode == ApiMode::Chat {
            return Err(CollectorError::Config("perplexity scoring needs the completions endpoint".into()));
        }
        Ok(())
    }

    /// Rejects perplexity scoring against endpoints without logprobs.
    pub fn validate_for(&self, endpoint: &EndpointConfig) -> Result<()> {
        self.validate()?;
        if self.scoring == Scoring::Perplexity && !endpoint.supports_logprobs {
            return Err(CollectorError::Config(format!(
                "perplexity scoring needs logprobs, which {} does not provide",
                endpoint.base_url
            )));
        }
        Ok(())
    }

    /// Base seed shared by every cell of exemplar repetition `m`.
    pub fn cell_seed(&self, m: usize) -> u64 {
        derive_seed(self.root_seed, &format!("collect/seed/{m}"))
    }
}

/// Up to `q` question indices, ascending; the whole set when `q` covers it.
pub fn sample_questions(target: &TaskId, n: usize, q: Option<usize>, seed: u64) -> Vec<usize> {
    match q {
        Some(q) if q < n => {
            let mut rng = rng_for(seed, &format!("questions/{target}"));
            let mut idx = index::sample(&mut rng, n, q).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

fn score_one(prompt: String, gold: &str, cfg: &CollectConfig, backend: &dyn CompletionBackend) -> Result<f64> {
    match cfg.scoring {
        Scoring::ExactMatch | Scoring::StrictMatch => {
            let req = CompletionRequest::generate(&cfg.model, prompt, cfg.max_tokens(), cfg.mode);
            let resp = backend.complete(&req)?;
            Ok(score_exact_match(&resp.text, gold, cfg.scoring == Scoring::StrictMatch))
        }
        Scoring::Perplexity => {
            let start = prompt.len();
            let resp = backend.complete(&CompletionRequest::score(&cfg.model, prompt + gold))?;
            score_perplexity(&resp.logprobs_from(start))
        }
    }
}

/// Records for one (source, target, seed) cell, in question order.
pub fn run_cell(
    source: &TaskData,
    target: &TaskData,
    m: usize,
    cfg: &CollectConfig,
    backend: &dyn CompletionBackend,
) -> Result<Vec<TransferRecord>> {
    let seed = cfg.cell_seed(m);
    let exemplars = sample_exemplars(source.id(), &source.pool, cfg.l, seed);
    let template = PromptTemplate::new(cfg.style, source.spec.instruction.clone());
    let questions = sample_questions(target.id(), target.test.len(), cfg.q, seed);
    questions
        .par_iter()
        .map(|&qi| {
            let ex = &target.test[qi];
            let prompt = template.render(&exemplars.exemplars, &ex.input);
            let score = score_one(prompt, &ex.output, cfg, backend)?;
            Ok(TransferRecord {
                source: source.id().clone(),
                target: target.id().clone(),
                seed: m as u64,
                question_id: target.question_id(qi),
                score,
            })
        })
        .collect()
}

fn bounded_pool(cfg: &CollectConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight)
        .build()
        .map_err(|e| CollectorError::Config(format!("thread pool: {e}")))
}

/// All `m` seeds for one source/target pair.
pub fn run_transfer_eval(
    source: &TaskData,
    target: &TaskData,
    cfg: &CollectConfig,
    backend: &dyn CompletionBackend,
) -> Result<Vec<TransferRecord>> {
    cfg.validate()?;
    let pool = bounded_pool(cfg)?;
    let mut out = Vec::new();
    for m in 1..=cfg.m {
        out.extend(pool.install(|| run_cell(source, target, m, cfg, backend))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub source: TaskId,
    pub target: TaskId,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCell {
    #[serde(flatten)]
    pub cell: CellKey,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub expected_cells: usize,
    pub completed_cells: usize,
    /// Cells already finished by an earlier run.
    pub resumed_cells: usize,
    pub records_written: usize,
    pub missing: Vec<MissingCell>,
}

impl CompletenessReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty() && self.completed_cells == self.expected_cells
    }
}

pub struct GridPaths {
    pub records: PathBuf,
    pub manifest: PathBuf,
    pub report: PathBuf,
}

impl GridPaths {
    pub fn new(out_dir: &Path) -> Self {
        Self {
            records: out_dir.join(RECORDS_FILE),
            manifest: out_dir.join(MANIFEST_FILE),
            report: out_dir.join(REPORT_FILE),
        }
    }
}

fn read_manifest(path: &Path) -> Result<HashSet<CellKey>> {
    let mut done = HashSet::new();
    if !path.exists() {
        return Ok(done);
    }
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CellKey>(&line) {
            Ok(k) => {
                done.insert(k);
            }
            // a torn final line from an interrupted write
            Err(e) => log::warn!("skipping manifest line {line:?}: {e}"),
        }
    }
    Ok(done)
}

/// Drops records whose cell never made it into the manifest.
fn prune_records(path: &Path, done: &HashSet<CellKey>) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let mut kept = String::with_capacity(text.len());
    let mut dropped = 0;
    for line in text.lines() {
        let keep = read_records_jsonl(line.as_bytes(), ScoreDirection::HigherIsBetter)
            .ok()
            .and_then(|r| r.into_iter().next())
            .is_some_and(|r| done.contains(&CellKey { source: r.source, target: r.target, seed: r.seed }));
        if keep {
            kept.push_str(line);
            kept.push('\n');
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("dropping {dropped} records from unfinished cells");
        fs::write(path, kept)?;
    }
    Ok(())
}

/// Runs every (source, target, seed) cell in grid order, appending records
/// and marking cells done in the manifest. Cells listed in an existing
/// manifest are skipped, so an interrupted run can be resumed. A cell with a
/// permanent failure is left out entirely and listed in the report.
pub fn run_grid(tasks: &[TaskData], cfg: &CollectConfig, backend: &dyn CompletionBackend, out_dir: &Path) -> Result<CompletenessReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let paths = GridPaths::new(out_dir);
    let done = read_manifest(&paths.manifest)?;
    prune_records(&paths.records, &done)?;

    let pool = bounded_pool(cfg)?;
    let open = |p: &Path| OpenOptions::new().create(true).append(true).open(p);
    let mut records_out = BufWriter::new(open(&paths.records)?);
    let mut manifest_out = BufWriter::new(open(&paths.manifest)?);

    let mut report = CompletenessReport {
        expected_cells: tasks.len() * tasks.len() * cfg.m,
        completed_cells: 0,
        resumed_cells: 0,
        records_written: 0,
        missing: Vec::new(),
    };
    for source in tasks {
        for target in tasks {
            for m in 1..=cfg.m {
                let key = CellKey { source: source.id().clone(), target: target.id().clone(), seed: m as u64 };
                if done.contains(&key) {
                    report.resumed_cells += 1;
                    report.completed_cells += 1;
                    continue;
                }
                match pool.install(|| run_cell(source, target, m, cfg, backend)) {
                    Ok(records) => {
                        write_records_jsonl(&mut records_out, &records)?;
                        records_out.flush()?;
                        serde_json::to_writer(&mut manifest_out, &key)?;
                        manifest_out.write_all(b"\n")?;
                        manifest_out.flush()?;
                        report.completed_cells += 1;
                        report.records_written += records.len();
                    }
                    Err(e @ (CollectorError::Config(_) | CollectorError::Io(_))) => return Err(e),
                    Err(e) => {
                        log::error!("cell {}/{}/{m} failed: {e}", key.source, key.target);
                        report.missing.push(MissingCell { cell: key, error: e.to_string() });
                    }
                }
            }
        }
    }
    fs::write(&paths.report, serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}
