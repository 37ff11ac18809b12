//! One function per pipeline stage. Each reads the previous stage's artifact
//! from disk and writes its own, stamped with the config digest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use bento_collector::mock::MockServer;
use bento_collector::ranking::rank_tasks_by_prompt;
use bento_collector::transfer::RECORDS_FILE;
use bento_collector::{data, run_grid, CachedBackend, CompletionBackend, HttpBackend, ResponseCache, RetryPolicy};
use bento_core::chord::chord_export;
use bento_core::cluster::{spectral_cluster, KMeansConfig};
use bento_core::embedding::{le_embed, normalized_laplacian, EmbeddingDim};
use bento_core::evaluation::{
    default_k_max, evaluate_subset, render_sweep_table, sweep_k, EvalOptions, EvalReport, PerformanceTable,
    SweepReport,
};
use bento_core::ict::{read_records_jsonl, IctMatrix};
use bento_core::io::write_json;
use bento_core::pipeline::{bm25_select, kernel_similarity, le_similarity, selection_similarity, Representation};
use bento_core::selection::{
    fl_bruteforce, fl_greedy, kmedoids, prompt_ranked_selection, random_subsets, KMedoidsConfig, KMedoidsInput, Method,
    TaskCorpus,
};
use bento_core::seed::{derive_seed, matrix_digest};
use bento_core::{SelectionResult, SimilarityMatrix, TaskId};

use crate::config::{MatrixNormalization, PipelineConfig, SelectorMethod};

pub const MATRIX_FILE: &str = "matrix.csv";
pub const SIMILARITY_FILE: &str = "similarity.csv";
pub const SELECTION_FILE: &str = "selection.json";
pub const EVAL_FILE: &str = "eval.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const CHORD_FILE: &str = "chord.json";
pub const CHORD_DOT_FILE: &str = "chord.dot";
pub const RANKING_FILE: &str = "ranking.txt";

/// Resolved configuration plus where artifacts go.
pub struct RunContext {
    pub cfg: PipelineConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct Stamp {
    config_digest: String,
}

impl RunContext {
    pub fn new(cfg: PipelineConfig, out_dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self { cfg, out_dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn digest(&self) -> String {
        self.cfg.digest()
    }

    fn or_default(&self, given: Option<&Path>, name: &str) -> PathBuf {
        given.map(Path::to_path_buf).unwrap_or_else(|| self.path(name))
    }

    fn benchmark(&self) -> Result<Vec<data::TaskData>> {
        let b = &self.cfg.benchmark;
        let list = b.task_list.as_ref().ok_or_else(|| anyhow!("benchmark.task_list is not set"))?;
        let dir = b.data_dir.clone().or_else(|| list.parent().map(Path::to_path_buf)).unwrap_or_default();
        Ok(data::load_benchmark(list, &dir)?)
    }
}

pub struct CollectArgs {
    /// Serve answers from an in-process mock endpoint instead of `[endpoint]`.
    pub mock: bool,
}

pub fn cmd_collect(ctx: &RunContext, args: &CollectArgs) -> Result<()> {
    let tasks = ctx.benchmark()?;
    let mock;
    let (client, model) = if args.mock {
        mock = MockServer::start()?;
        let c = HttpBackend::new(&mock.base_url(), "mock".into(), Duration::from_secs(30), RetryPolicy::default());
        (c, "mock".to_string())
    } else {
        let ep = ctx.cfg.endpoint.as_ref().ok_or_else(|| anyhow!("[endpoint] section is required for collect"))?;
        ctx.cfg.collect_config(&ep.model).validate_for(ep)?;
        (HttpBackend::from_config(ep)?, ep.model.clone())
    };
    let cache_dir = ctx.cfg.collect.cache_dir.clone().unwrap_or_else(|| ctx.path("cache"));
    let backend = CachedBackend::new(&client, ResponseCache::new(cache_dir));
    let report = run_grid(&tasks, &ctx.cfg.collect_config(&model), &backend, &ctx.out_dir)?;
    write_json(&ctx.path("collect.meta.json"), &Stamp { config_digest: ctx.digest() })?;
    eprintln!(
        "collect: {}/{} cells complete ({} resumed), {} records written, {} endpoint requests, {} cache hits",
        report.completed_cells,
        report.expected_cells,
        report.resumed_cells,
        report.records_written,
        backend.requests(),
        backend.hits()
    );
    if !report.is_complete() {
        log::warn!("{} cells failed; see completeness.json", report.missing.len());
    }
    Ok(())
}

/// Aggregates records and normalizes the matrix.
pub fn build_matrix(records_path: &Path, cfg: &PipelineConfig, tasks: Option<Vec<TaskId>>) -> Result<IctMatrix> {
    let file = fs::File::open(records_path).with_context(|| format!("opening {}", records_path.display()))?;
    let records = read_records_jsonl(std::io::BufReader::new(file), cfg.matrix.direction())?;
    let tasks = match tasks {
        Some(t) => t,
        None => {
            let mut seen = Vec::new();
            for r in &records {
                for t in [&r.source, &r.target] {
                    if !seen.contains(t) {
                        seen.push(t.clone());
                    }
                }
            }
            seen
        }
    };
    let raw = IctMatrix::aggregate(&records, &tasks, cfg.matrix.aggregate_options())?;
    Ok(match cfg.matrix.normalization {
        MatrixNormalization::Centered => raw.center_columns()?,
        MatrixNormalization::Zscored => raw.zscore_columns()?,
    })
}

pub fn cmd_matrix(ctx: &RunContext, records: Option<&Path>) -> Result<PathBuf> {
    let tasks = match &ctx.cfg.benchmark.task_list {
        Some(p) => Some(data::read_task_list(p)?.into_iter().map(|t| t.id).collect()),
        None => None,
    };
    let a = build_matrix(&ctx.or_default(records, RECORDS_FILE), &ctx.cfg, tasks)?;
    let out = ctx.path(MATRIX_FILE);
    a.save(&out, Some(&ctx.digest()))?;
    eprintln!("matrix: {} tasks, {:?}, written to {}", a.len(), a.normalization(), out.display());
    Ok(out)
}

/// Inputs a selector may need beyond the matrix.
#[derive(Default)]
pub struct SelectInputs {
    pub corpora: Option<Vec<TaskCorpus>>,
    pub ranking: Option<Vec<TaskId>>,
}

impl SelectInputs {
    pub fn load(ctx: &RunContext, methods: &[SelectorMethod]) -> Result<Self> {
        let mut out = SelectInputs::default();
        if methods.iter().any(|m| matches!(m, SelectorMethod::Bm25Sim | SelectorMethod::Bm25Le)) {
            out.corpora = Some(ctx.benchmark()?.iter().map(|t| t.corpus()).collect());
        }
        if methods.contains(&SelectorMethod::PromptRanked) {
            let p = ctx.cfg.selection.ranking.clone().unwrap_or_else(|| ctx.path(RANKING_FILE));
            out.ranking = Some(read_ranking(&p)?);
        }
        Ok(out)
    }
}

pub fn read_ranking(path: &Path) -> Result<Vec<TaskId>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading ranking {}", path.display()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| TaskId::new(l).map_err(Into::into))
        .collect()
}

/// Runs one selector. Random returns one result per trial; the others one
/// result, plus the similarity matrix the greedy step saw when there is one.
pub fn run_selector(
    cfg: &PipelineConfig,
    a: &IctMatrix,
    inputs: &SelectInputs,
    method: SelectorMethod,
    k: usize,
) -> Result<(Vec<SelectionResult>, Option<SimilarityMatrix>)> {
    let opts = cfg.pipeline_options();
    let kmed_seed = derive_seed(cfg.seed, "select/kmedoids");
    let kcfg = KMedoidsConfig::default();
    let one = |r: SelectionResult| vec![r.with_config_digest(cfg.digest())];
    Ok(match method {
        SelectorMethod::BentoSim | SelectorMethod::BentoLe => {
            let rep = if method == SelectorMethod::BentoSim { Representation::Sim } else { Representation::Le };
            let s = selection_similarity(a, rep, &opts)?;
            (one(fl_greedy(&s, k, opts.strategy)?), Some(s))
        }
        SelectorMethod::FlBruteforce => {
            let s = kernel_similarity(a, &opts)?;
            (one(fl_bruteforce(&s, k)?), Some(s))
        }
        SelectorMethod::Bm25Sim | SelectorMethod::Bm25Le => {
            let corpora = inputs.corpora.as_ref().ok_or_else(|| anyhow!("bm25 selection needs benchmark task data"))?;
            let rep = if method == SelectorMethod::Bm25Sim { Representation::Sim } else { Representation::Le };
            (one(bm25_select(corpora, k, rep, &cfg.selection.bm25, cfg.selection.bm25_center, &opts)?), None)
        }
        SelectorMethod::KmedoidsRaw => (one(kmedoids(KMedoidsInput::Raw(a), k, kmed_seed, &kcfg)?), None),
        SelectorMethod::KmedoidsSim => {
            let s = kernel_similarity(a, &opts)?;
            (one(kmedoids(KMedoidsInput::Similarity(&s), k, kmed_seed, &kcfg)?), Some(s))
        }
        SelectorMethod::KmedoidsLe => {
            let (emb, _) = le_similarity(&kernel_similarity(a, &opts)?, opts.dim)?;
            let input = KMedoidsInput::Embedding { tasks: &emb.tasks, rows: &emb.vectors };
            (one(kmedoids(input, k, kmed_seed, &kcfg)?), None)
        }
        SelectorMethod::Random => {
            let seed = derive_seed(cfg.seed, &format!("select/random/k{k}"));
            let digest = matrix_digest(a.tasks(), a.values());
            let results = random_subsets(a.len(), k, cfg.selection.trials, seed)?
                .into_iter()
                .map(|idx| SelectionResult {
                    method: Method::Random,
                    similarity: None,
                    k,
                    selected: idx.iter().map(|&i| a.tasks()[i].clone()).collect(),
                    objective_trace: Vec::new(),
                    input_digest: digest.clone(),
                    config_digest: cfg.digest(),
                })
                .collect();
            (results, None)
        }
        SelectorMethod::PromptRanked => {
            let ranking = inputs.ranking.as_ref().ok_or_else(|| anyhow!("prompt-ranked selection needs a ranking file"))?;
            (one(prompt_ranked_selection(a.tasks(), ranking, k)?), None)
        }
    })
}

pub struct SelectArgs<'a> {
    pub matrix: Option<&'a Path>,
    pub method: Option<SelectorMethod>,
    pub k: Option<usize>,
}

pub fn cmd_select(ctx: &RunContext, args: &SelectArgs) -> Result<SelectionResult> {
    let a = IctMatrix::load(&ctx.or_default(args.matrix, MATRIX_FILE))?;
    let method = args.method.unwrap_or(ctx.cfg.selection.method);
    let k = args.k.unwrap_or(ctx.cfg.selection.k);
    if k > a.len() {
        bail!("k = {k} exceeds the {} tasks in the matrix", a.len());
    }
    let inputs = SelectInputs::load(ctx, &[method])?;
    let (mut results, sim) = run_selector(&ctx.cfg, &a, &inputs, method, k)?;
    if let Some(s) = sim {
        s.save(&ctx.path(SIMILARITY_FILE), Some(ctx.cfg.similarity.metric), Some(&ctx.digest()))?;
    }
    if results.len() > 1 {
        log::info!("{} produced {} trials; writing the first", method.name(), results.len());
    }
    let r = results.swap_remove(0);
    write_json(&ctx.path(SELECTION_FILE), &r)?;
    println!("{}: {}", method.name(), r.selected_str().join(", "));
    Ok(r)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalArtifact {
    pub config_digest: String,
    pub method: Method,
    pub report: EvalReport,
    /// Reports for each prefix of an ordered selection.
    pub per_k: Vec<EvalReport>,
}

fn eval_options(cfg: &PipelineConfig) -> EvalOptions {
    EvalOptions {
        averaging: cfg.evaluation.averaging,
        variant: cfg.evaluation.variant,
        resamples: cfg.evaluation.resamples,
        seed: derive_seed(cfg.seed, "evaluate/bootstrap"),
    }
}

pub fn cmd_evaluate(ctx: &RunContext, performance: &Path, selection: Option<&Path>) -> Result<EvalArtifact> {
    let table = PerformanceTable::load(performance)?;
    let sel_path = ctx.or_default(selection, SELECTION_FILE);
    let sel: SelectionResult =
        serde_json::from_slice(&fs::read(&sel_path).with_context(|| format!("reading {}", sel_path.display()))?)?;
    let opts = eval_options(&ctx.cfg);
    let report = evaluate_subset(&table, &sel.selected, &opts)?;
    let prefix_stable = matches!(sel.method, Method::FlGreedy | Method::Bm25Sim | Method::Bm25Le | Method::PromptRanked);
    let per_k = if prefix_stable {
        (1..=sel.selected.len())
            .map(|k| evaluate_subset(&table, &sel.selected[..k], &opts))
            .collect::<bento_core::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    println!("k  nrmse     bootstrap");
    for r in per_k.iter().chain(per_k.is_empty().then_some(&report)) {
        println!("{:<2} {:.6}  {:.6} +/- {:.6}", r.k, r.nrmse, r.bootstrap_mean, r.bootstrap_std);
    }
    let artifact = EvalArtifact { config_digest: ctx.digest(), method: sel.method, report, per_k };
    write_json(&ctx.path(EVAL_FILE), &artifact)?;
    Ok(artifact)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepArtifact {
    pub config_digest: String,
    pub sweeps: Vec<SweepReport>,
}

pub struct SweepArgs<'a> {
    pub matrix: Option<&'a Path>,
    pub performance: &'a Path,
    pub methods: Vec<SelectorMethod>,
    pub k_max: Option<usize>,
}

pub fn cmd_sweep(ctx: &RunContext, args: &SweepArgs) -> Result<SweepArtifact> {
    let a = IctMatrix::load(&ctx.or_default(args.matrix, MATRIX_FILE))?;
    let table = PerformanceTable::load(args.performance)?;
    let methods = if args.methods.is_empty() { ctx.cfg.evaluation.methods.clone() } else { args.methods.clone() };
    let k_max = args.k_max.or(ctx.cfg.evaluation.k_max).unwrap_or_else(|| default_k_max(a.len()));
    let inputs = SelectInputs::load(ctx, &methods)?;
    let opts = eval_options(&ctx.cfg);
    let sweeps = methods
        .iter()
        .map(|&m| {
            sweep_k(&table, m.name(), k_max, &opts, |k| {
                let (results, _) = run_selector(&ctx.cfg, &a, &inputs, m, k)
                    .map_err(|e| bento_core::BentoError::InvalidArgument(format!("{}: {e:#}", m.name())))?;
                Ok(results.into_iter().map(|r| r.selected).collect())
            })
            .map_err(anyhow::Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    print!("{}", render_sweep_table(&sweeps));
    let artifact = SweepArtifact { config_digest: ctx.digest(), sweeps };
    write_json(&ctx.path(SWEEP_FILE), &artifact)?;
    Ok(artifact)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChordArtifact {
    pub config_digest: String,
    pub intra_cluster_fraction: f64,
    #[serde(flatten)]
    pub graph: bento_core::chord::ChordGraph,
}

pub fn cmd_chord(ctx: &RunContext, matrix: Option<&Path>, clusters: Option<usize>, top_fraction: Option<f64>) -> Result<ChordArtifact> {
    let clusters = clusters
        .or(ctx.cfg.chord.clusters)
        .ok_or_else(|| anyhow!("a cluster count is required (--clusters or chord.clusters)"))?;
    let top = top_fraction.unwrap_or(ctx.cfg.chord.top_fraction);
    let a = IctMatrix::load(&ctx.or_default(matrix, MATRIX_FILE))?;
    let s = kernel_similarity(&a, &ctx.cfg.pipeline_options())?;
    let emb = le_embed(&normalized_laplacian(&s)?, EmbeddingDim::Fixed(clusters))?;
    let assignment = spectral_cluster(&emb, clusters, derive_seed(ctx.cfg.seed, "chord/kmeans"), &KMeansConfig::default())?;
    let graph = chord_export(&a, &assignment, top)?;
    fs::write(ctx.path(CHORD_DOT_FILE), graph.to_dot())?;
    let artifact = ChordArtifact { config_digest: ctx.digest(), intra_cluster_fraction: graph.intra_cluster_fraction(), graph };
    write_json(&ctx.path(CHORD_FILE), &artifact)?;
    eprintln!("chord: {} nodes, {} arcs, {} clusters", artifact.graph.nodes.len(), artifact.graph.arcs.len(), clusters);
    Ok(artifact)
}

pub fn cmd_rank(ctx: &RunContext, mock: bool) -> Result<Vec<TaskId>> {
    let tasks: Vec<TaskId> = match &ctx.cfg.benchmark.task_list {
        Some(p) => data::read_task_list(p)?.into_iter().map(|t| t.id).collect(),
        None => bail!("benchmark.task_list is not set"),
    };
    let server;
    let (client, model, mode): (Box<dyn CompletionBackend>, String, _) = if mock {
        server = MockServer::start()?;
        let c = HttpBackend::new(&server.base_url(), "mock".into(), Duration::from_secs(30), RetryPolicy::default());
        (Box::new(c), "mock".into(), Default::default())
    } else {
        let ep = ctx.cfg.endpoint.as_ref().ok_or_else(|| anyhow!("[endpoint] section is required for rank"))?;
        (Box::new(HttpBackend::from_config(ep)?), ep.model.clone(), ep.mode)
    };
    let ranked = rank_tasks_by_prompt(&tasks, client.as_ref(), &model, mode)?;
    let mut text = format!("# config_digest {}\n", ctx.digest());
    for t in &ranked {
        text.push_str(t.as_str());
        text.push('\n');
    }
    fs::write(ctx.path(RANKING_FILE), text)?;
    Ok(ranked)
}
