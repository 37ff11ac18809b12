//! Command-line front end for the task-selection pipeline.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{CollectArgs, RunContext, SelectArgs, SweepArgs};
use config::{PipelineConfig, SelectorMethod};

#[derive(Debug, Parser)]
#[command(name = "bento", version, about = "Pick a small, representative subset of benchmark tasks")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for artifacts; overrides the config.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Increase log verbosity (-v, -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Query the endpoint for every (source, target, seed) cell.
    Collect {
        /// Use an in-process mock endpoint.
        #[arg(long)]
        mock: bool,
    },
    /// Aggregate transfer records into the normalized matrix.
    Matrix {
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Select k tasks.
    Select {
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<SelectorMethod>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score a selection against a full performance table.
    Evaluate {
        #[arg(long)]
        performance: PathBuf,
        #[arg(long)]
        selection: Option<PathBuf>,
    },
    /// Compare methods for k = 1..k_max.
    Sweep {
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        performance: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',')]
        methods: Vec<SelectorMethod>,
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Export the strongest transfer arcs, grouped by spectral cluster.
    Chord {
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        top_fraction: Option<f64>,
    },
    /// Ask the model to rank tasks by representativeness.
    Rank {
        #[arg(long)]
        mock: bool,
    },
    /// Serve the deterministic mock endpoint until interrupted.
    MockServe {
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: String,
    },
}

pub fn resolve_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::MockServe { addr } = &cli.command {
        let server = bento_collector::mock::MockServer::bind(addr, std::sync::Arc::new(bento_collector::mock::deterministic_reply))?;
        eprintln!("mock endpoint at {}", server.base_url());
        server.join();
        return Ok(());
    }
    let cfg = resolve_config(&cli)?;
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let ctx = RunContext::new(cfg, out_dir)?;
    match &cli.command {
        Command::Collect { mock } => commands::cmd_collect(&ctx, &CollectArgs { mock: *mock })?,
        Command::Matrix { records } => {
            commands::cmd_matrix(&ctx, records.as_deref())?;
        }
        Command::Select { matrix, method, k } => {
            commands::cmd_select(&ctx, &SelectArgs { matrix: matrix.as_deref(), method: *method, k: *k })?;
        }
        Command::Evaluate { performance, selection } => {
            commands::cmd_evaluate(&ctx, performance, selection.as_deref())?;
        }
        Command::Sweep { matrix, performance, methods, k_max } => {
            let args = SweepArgs { matrix: matrix.as_deref(), performance, methods: methods.clone(), k_max: *k_max };
            commands::cmd_sweep(&ctx, &args)?;
        }
        Command::Chord { matrix, clusters, top_fraction } => {
            commands::cmd_chord(&ctx, matrix.as_deref(), *clusters, *top_fraction)?;
        }
        Command::Rank { mock } => {
            for t in commands::cmd_rank(&ctx, *mock)? {
                println!("{t}");
            }
        }
        Command::MockServe { .. } => unreachable!(),
    }
    Ok(())
}
