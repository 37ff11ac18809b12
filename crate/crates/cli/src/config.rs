//! Pipeline configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use bento_collector::{CollectConfig, EndpointConfig, PromptStyle, Scoring};
use bento_core::embedding::EmbeddingDim;
use bento_core::evaluation::{Averaging, NrmseVariant, DEFAULT_RESAMPLES};
use bento_core::ict::{AggregateOptions, AggregationMode, MissingPairPolicy, ScoreDirection};
use bento_core::pipeline::PipelineOptions;
use bento_core::selection::{Bm25Config, GreedyStrategy};
use bento_core::seed::digest_hex;
use bento_core::similarity::{DistanceMetric, KernelConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Output directory; `--out-dir` takes precedence. Not part of the digest.
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub benchmark: BenchmarkConfig,
    pub endpoint: Option<EndpointConfig>,
    pub collect: CollectSection,
    pub matrix: MatrixConfig,
    pub similarity: SimilarityConfig,
    pub selection: SelectionConfig,
    pub evaluation: EvaluationConfig,
    pub chord: ChordConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub style: PromptStyle,
    /// JSONL task list: `{"id": .., "instruction": ..}` per line.
    pub task_list: Option<PathBuf>,
    /// Holds `<id>.pool.jsonl` and `<id>.test.jsonl`.
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub l: usize,
    pub m: usize,
    pub q: Option<usize>,
    pub scoring: Scoring,
    pub max_tokens: Option<u32>,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for CollectSection {
    fn default() -> Self {
        let c = CollectConfig::default();
        Self { l: c.l, m: c.m, q: c.q, scoring: c.scoring, max_tokens: c.max_tokens, max_in_flight: c.max_in_flight, cache_dir: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixNormalization {
    #[default]
    Centered,
    /// Centered and divided by the population std of each column.
    Zscored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixConfig {
    pub normalization: MatrixNormalization,
    pub aggregation: AggregationMode,
    pub missing: MissingPairPolicy,
    /// Set for lower-is-better scores; they are negated on ingestion.
    pub lower_is_better: bool,
}

impl MatrixConfig {
    pub fn aggregate_options(&self) -> AggregateOptions {
        AggregateOptions { mode: self.aggregation, missing: self.missing }
    }

    pub fn direction(&self) -> ScoreDirection {
        if self.lower_is_better {
            ScoreDirection::LowerIsBetter
        } else {
            ScoreDirection::HigherIsBetter
        }
    }
}

/// Embedding size: a fixed count or `"eigengap"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DimSetting(pub EmbeddingDim);

impl Serialize for DimSetting {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            EmbeddingDim::Fixed(k) => s.serialize_u64(k as u64),
            EmbeddingDim::Eigengap => s.serialize_str("eigengap"),
        }
    }
}

impl<'de> Deserialize<'de> for DimSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(k) => Ok(DimSetting(EmbeddingDim::Fixed(k))),
            Raw::Word(w) if w == "eigengap" => Ok(DimSetting(EmbeddingDim::Eigengap)),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("dim must be an integer or \"eigengap\", got {w:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub metric: DistanceMetric,
    /// `c = t * max E`.
    pub t: f64,
    /// Absolute `c`; overrides `t`.
    pub c: Option<f64>,
    pub standardize_distances: bool,
    pub dim: DimSetting,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self { metric: DistanceMetric::Euclidean, t: 1.5, c: None, standardize_distances: false, dim: DimSetting::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorMethod {
    #[default]
    BentoSim,
    BentoLe,
    FlBruteforce,
    Bm25Sim,
    Bm25Le,
    KmedoidsRaw,
    KmedoidsSim,
    KmedoidsLe,
    Random,
    PromptRanked,
}

impl SelectorMethod {
    pub fn name(self) -> &'static str {
        match self {
            SelectorMethod::BentoSim => "bento-sim",
            SelectorMethod::BentoLe => "bento-le",
            SelectorMethod::FlBruteforce => "fl-bruteforce",
            SelectorMethod::Bm25Sim => "bm25-sim",
            SelectorMethod::Bm25Le => "bm25-le",
            SelectorMethod::KmedoidsRaw => "kmedoids-raw",
            SelectorMethod::KmedoidsSim => "kmedoids-sim",
            SelectorMethod::KmedoidsLe => "kmedoids-le",
            SelectorMethod::Random => "random",
            SelectorMethod::PromptRanked => "prompt-ranked",
        }
    }

    /// Selections for k and k + 1 share a prefix.
    pub fn is_prefix_stable(self) -> bool {
        matches!(
            self,
            SelectorMethod::BentoSim
                | SelectorMethod::BentoLe
                | SelectorMethod::Bm25Sim
                | SelectorMethod::Bm25Le
                | SelectorMethod::PromptRanked
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub method: SelectorMethod,
    pub k: usize,
    pub strategy: GreedyStrategy,
    /// Random-baseline draws per k.
    pub trials: usize,
    pub bm25: Bm25Config,
    /// Column-center the BM25 matrix before the kernel.
    pub bm25_center: bool,
    /// One task id per line, most representative first.
    pub ranking: Option<PathBuf>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            method: SelectorMethod::BentoSim,
            k: 3,
            strategy: GreedyStrategy::Lazy,
            trials: 1000,
            bm25: Bm25Config::default(),
            bm25_center: true,
            ranking: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub averaging: Averaging,
    pub variant: NrmseVariant,
    pub resamples: usize,
    /// Defaults to about 18% of the task count.
    pub k_max: Option<usize>,
    /// Methods compared by `sweep`.
    pub methods: Vec<SelectorMethod>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            averaging: Averaging::Macro,
            variant: NrmseVariant::AsPrinted,
            resamples: DEFAULT_RESAMPLES,
            k_max: None,
            methods: vec![SelectorMethod::Random, SelectorMethod::BentoSim, SelectorMethod::BentoLe],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChordConfig {
    pub top_fraction: f64,
    pub clusters: Option<usize>,
}

impl Default for ChordConfig {
    fn default() -> Self {
        Self { top_fraction: 0.07, clusters: None }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.selection.k == 0 {
            bail!("selection.k must be >= 1");
        }
        if self.selection.trials == 0 {
            bail!("selection.trials must be >= 1");
        }
        if self.evaluation.resamples == 0 {
            bail!("evaluation.resamples must be >= 1");
        }
        if !(self.chord.top_fraction > 0.0 && self.chord.top_fraction <= 1.0) {
            bail!("chord.top_fraction must be in (0, 1]");
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of every setting that shapes outputs.
    pub fn digest(&self) -> String {
        digest_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            metric: self.similarity.metric,
            kernel: KernelConfig { t: self.similarity.t, absolute_c: self.similarity.c },
            dim: self.similarity.dim.0,
            strategy: self.selection.strategy,
            standardize_distances: self.similarity.standardize_distances,
        }
    }

    pub fn collect_config(&self, model: &str) -> CollectConfig {
        CollectConfig {
            model: model.to_string(),
            style: self.benchmark.style,
            scoring: self.collect.scoring,
            mode: self.endpoint.as_ref().map(|e| e.mode).unwrap_or_default(),
            l: self.collect.l,
            m: self.collect.m,
            q: self.collect.q,
            max_tokens: self.collect.max_tokens,
            root_seed: self.seed,
            max_in_flight: self.collect.max_in_flight,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(c.collect.l, 5);
        assert_eq!(c.collect.m, 10);
        assert_eq!(c.collect.q, None);
        assert_eq!(c.similarity.t, 1.5);
        assert_eq!(c.similarity.dim.0, EmbeddingDim::Eigengap);
        assert_eq!(c.evaluation.resamples, 1000);
        assert_eq!(c.chord.top_fraction, 0.07);
    }

    #[test]
    fn parses_sections() {
        let c: PipelineConfig = toml::from_str(
            r#"
            seed = 7
            [similarity]
            metric = "chebyshev"
            dim = 4
            [selection]
            method = "bento-le"
            k = 5
            [matrix]
            normalization = "zscored"
            [evaluation]
            methods = ["random", "kmedoids-le"]
            "#,
        )
        .unwrap();
        assert_eq!(c.similarity.metric, DistanceMetric::Chebyshev);
        assert_eq!(c.similarity.dim.0, EmbeddingDim::Fixed(4));
        assert_eq!(c.selection.method, SelectorMethod::BentoLe);
        assert_eq!(c.matrix.normalization, MatrixNormalization::Zscored);
        assert_eq!(c.evaluation.methods, vec![SelectorMethod::Random, SelectorMethod::KmedoidsLe]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_dims() {
        assert!(toml::from_str::<PipelineConfig>("[selection]\nkk = 3").is_err());
        assert!(toml::from_str::<PipelineConfig>("[similarity]\ndim = \"auto\"").is_err());
    }

    #[test]
    fn example_config_loads() {
        let c = PipelineConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../bento.example.toml")).unwrap();
        assert_eq!(c.chord.clusters, Some(4));
        assert_eq!(c.endpoint.unwrap().api_key_env, "BENTO_API_KEY");
    }

    #[test]
    fn digest_tracks_settings_but_not_out_dir() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { out_dir: Some("elsewhere".into()), ..PipelineConfig::default() };
        assert_eq!(a.digest(), b.digest());
        let c = PipelineConfig { seed: 1, ..PipelineConfig::default() };
        assert_ne!(a.digest(), c.digest());
    }
}
