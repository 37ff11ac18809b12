use std::fs;
use std::path::Path;
use std::process::Command;

use bento_cli::commands::{
    build_matrix, cmd_chord, cmd_collect, cmd_evaluate, cmd_matrix, cmd_select, cmd_sweep, CollectArgs, EvalArtifact, RunContext,
    SelectArgs, SweepArgs, CHORD_DOT_FILE, EVAL_FILE, MATRIX_FILE, SELECTION_FILE, SIMILARITY_FILE,
};
use bento_cli::config::{PipelineConfig, SelectorMethod};
use bento_core::evaluation::PerformanceTable;
use bento_core::ict::IctMatrix;
use bento_core::pipeline::{bento_select, Representation};
use bento_core::{SelectionResult, TaskId};

const TASKS: [&str; 5] = ["algebra", "anatomy", "astronomy", "ethics", "law"];

fn write_benchmark(dir: &Path) {
    let mut list = String::new();
    for (i, t) in TASKS.iter().enumerate() {
        list.push_str(&format!("{{\"id\": \"{t}\", \"instruction\": \"{t}\"}}\n"));
        let ex = |kind: &str, n: usize| -> String {
            (0..n)
                .map(|j| {
                    format!(
                        "{{\"question\": \"{t} {kind} {j}\", \"choices\": [\"w\", \"x\", \"y\", \"z\"], \"answer\": {}}}\n",
                        (i + j) % 4
                    )
                })
                .collect()
        };
        fs::write(dir.join(format!("{t}.pool.jsonl")), ex("pool", 4)).unwrap();
        fs::write(dir.join(format!("{t}.test.jsonl")), ex("test", 5)).unwrap();
    }
    fs::write(dir.join("tasks.jsonl"), list).unwrap();
}

fn write_performance(path: &Path) {
    let mut csv = format!("model,{}\n", TASKS.join(","));
    for m in 0..6 {
        let row: Vec<String> = (0..TASKS.len()).map(|j| format!("{}", 0.3 + 0.05 * m as f64 + 0.02 * ((m * j) % 5) as f64)).collect();
        csv.push_str(&format!("model{m},{}\n", row.join(",")));
    }
    fs::write(path, csv).unwrap();
}

fn config(dir: &Path) -> PipelineConfig {
    let text = format!(
        r#"
        seed = 11
        [benchmark]
        task_list = "{}"
        [collect]
        l = 2
        m = 2
        q = 3
        [selection]
        k = 2
        trials = 50
        [evaluation]
        resamples = 100
        k_max = 3
        "#,
        dir.join("tasks.jsonl").display()
    );
    let path = dir.join("bento.toml");
    fs::write(&path, text).unwrap();
    PipelineConfig::load(&path).unwrap()
}

fn collected() -> (tempfile::TempDir, RunContext) {
    let dir = tempfile::tempdir().unwrap();
    write_benchmark(dir.path());
    let ctx = RunContext::new(config(dir.path()), dir.path().join("out")).unwrap();
    cmd_collect(&ctx, &CollectArgs { mock: true }).unwrap();
    (dir, ctx)
}

#[test]
fn stages_match_the_in_memory_pipeline() {
    let (_dir, ctx) = collected();
    let records = fs::read_to_string(ctx.path("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 5 * 5 * 2 * 3);

    cmd_matrix(&ctx, None).unwrap();
    let sel = cmd_select(&ctx, &SelectArgs { matrix: None, method: None, k: None }).unwrap();
    assert!(ctx.path(SIMILARITY_FILE).exists());

    let tasks: Vec<TaskId> = TASKS.iter().map(|t| TaskId::new(*t).unwrap()).collect();
    let a = build_matrix(&ctx.path("records.jsonl"), &ctx.cfg, Some(tasks)).unwrap();
    let from_disk = IctMatrix::load(&ctx.path(MATRIX_FILE)).unwrap();
    assert_eq!(a.values(), from_disk.values());
    let direct = bento_select(&a, 2, Representation::Sim, &ctx.cfg.pipeline_options()).unwrap();
    assert_eq!(direct.selected, sel.selected);

    let saved: SelectionResult = serde_json::from_slice(&fs::read(ctx.path(SELECTION_FILE)).unwrap()).unwrap();
    assert_eq!(saved.config_digest, ctx.digest());
    assert_eq!(saved.selected, sel.selected);
}

#[test]
fn evaluate_sweep_and_chord() {
    let (dir, ctx) = collected();
    cmd_matrix(&ctx, None).unwrap();
    cmd_select(&ctx, &SelectArgs { matrix: None, method: Some(SelectorMethod::BentoLe), k: Some(3) }).unwrap();
    let perf = dir.path().join("perf.csv");
    write_performance(&perf);

    let eval = cmd_evaluate(&ctx, &perf, None).unwrap();
    assert_eq!(eval.per_k.len(), 3);
    assert_eq!(eval.per_k[2].nrmse, eval.report.nrmse);
    let saved: EvalArtifact = serde_json::from_slice(&fs::read(ctx.path(EVAL_FILE)).unwrap()).unwrap();
    assert_eq!(saved.report.nrmse, eval.report.nrmse);

    let methods = vec![SelectorMethod::Random, SelectorMethod::BentoSim, SelectorMethod::KmedoidsRaw];
    let sweep = cmd_sweep(&ctx, &SweepArgs { matrix: None, performance: &perf, methods, k_max: None }).unwrap();
    assert_eq!(sweep.sweeps.len(), 3);
    assert!(sweep.sweeps.iter().all(|s| s.reports.len() == 3));
    assert_eq!(sweep.sweeps[0].reports[0].trials, 50);

    // all tasks selected reproduces the full average exactly
    let table = PerformanceTable::load(&perf).unwrap();
    let full = bento_core::evaluation::evaluate_subset(&table, &table.tasks, &bento_core::evaluation::EvalOptions::default()).unwrap();
    assert!(full.nrmse.abs() < 1e-12);

    assert!(cmd_chord(&ctx, None, None, None).is_err());
    let chord = cmd_chord(&ctx, None, Some(2), Some(0.2)).unwrap();
    assert_eq!(chord.graph.arcs.len(), 4);
    assert!(fs::read_to_string(ctx.path(CHORD_DOT_FILE)).unwrap().starts_with("digraph"));
}

#[test]
fn rejects_k_above_task_count() {
    let (_dir, ctx) = collected();
    cmd_matrix(&ctx, None).unwrap();
    let err = cmd_select(&ctx, &SelectArgs { matrix: None, method: None, k: Some(6) }).unwrap_err();
    assert!(err.to_string().contains("exceeds"), "{err}");
}

#[test]
fn binary_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    write_benchmark(dir.path());
    config(dir.path());
    let bin = env!("CARGO_BIN_EXE_bento");
    let run = |args: &[&str]| {
        let out = Command::new(bin)
            .arg("--config")
            .arg(dir.path().join("bento.toml"))
            .arg("--out-dir")
            .arg(dir.path().join("out"))
            .args(args)
            .env_remove("BENTO_API_KEY")
            .output()
            .unwrap();
        (out.status.success(), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
    };
    let (ok, _, err) = run(&["collect", "--mock"]);
    assert!(ok, "{err}");
    assert!(run(&["matrix"]).0);
    let (ok, stdout, err) = run(&["select", "--method", "kmedoids-le", "--k", "2"]);
    assert!(ok, "{err}");
    assert!(stdout.starts_with("kmedoids-le: "));

    // a real endpoint without its key fails at startup
    let toml = fs::read_to_string(dir.path().join("bento.toml")).unwrap()
        + "[endpoint]\nbase_url = \"http://127.0.0.1:9/v1\"\nmodel = \"m\"\napi_key_env = \"BENTO_KEY_NOT_SET_ANYWHERE\"\n";
    fs::write(dir.path().join("bento.toml"), toml).unwrap();
    let (ok, _, err) = run(&["collect"]);
    assert!(!ok);
    assert!(err.contains("BENTO_KEY_NOT_SET_ANYWHERE"), "{err}");
}
