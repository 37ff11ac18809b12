use bento_core::ict::{read_records_jsonl, write_records_jsonl, AggregateOptions, MissingPairPolicy, ScoreDirection};
use bento_core::io::sidecar_path;
use bento_core::pipeline::{bento_select, kernel_similarity, PipelineOptions, Representation};
use bento_core::similarity::DistanceMetric;
use bento_core::{BentoError, IctMatrix, Normalization, SimilarityMatrix, TaskId, TransferRecord};

fn tasks() -> Vec<TaskId> {
    ["a1", "a2", "a3", "b1", "b2", "b3"].iter().map(|t| TaskId::new(*t).unwrap()).collect()
}

/// Tasks sharing a letter transfer well to each other.
fn records() -> Vec<TransferRecord> {
    let ts = tasks();
    let mut out = Vec::new();
    for (i, s) in ts.iter().enumerate() {
        for (j, t) in ts.iter().enumerate() {
            for seed in 0..2 {
                for q in 0..3 {
                    let base = if s.as_str()[..1] == t.as_str()[..1] { 0.8 } else { 0.3 };
                    let jitter = ((i * 7 + j * 3 + seed as usize * 5 + q) % 5) as f64 * 0.01;
                    out.push(TransferRecord { source: s.clone(), target: t.clone(), seed, question_id: format!("q{q}"), score: base + jitter });
                }
            }
        }
    }
    out
}

#[test]
fn records_to_selection() {
    let mut buf = Vec::new();
    write_records_jsonl(&mut buf, &records()).unwrap();
    let recs = read_records_jsonl(buf.as_slice(), ScoreDirection::HigherIsBetter).unwrap();
    assert_eq!(recs, records());

    let a = IctMatrix::aggregate(&recs, &tasks(), AggregateOptions::default()).unwrap().center_columns().unwrap();
    assert_eq!(a.normalization(), Normalization::Centered);
    for j in 0..a.len() {
        assert!(a.values().column(j).sum().abs() < 1e-12);
    }

    let opts = PipelineOptions::default();
    for rep in [Representation::Sim, Representation::Le] {
        let sel = bento_select(&a, 2, rep, &opts).unwrap();
        let groups: Vec<char> = sel.selected.iter().map(|t| t.as_str().chars().next().unwrap()).collect();
        assert!(groups.contains(&'a') && groups.contains(&'b'), "{rep:?}: {:?}", sel.selected_str());
    }
}

#[test]
fn lower_is_better_negates() {
    let mut buf = Vec::new();
    write_records_jsonl(&mut buf, &records()).unwrap();
    let hi = read_records_jsonl(buf.as_slice(), ScoreDirection::HigherIsBetter).unwrap();
    let lo = read_records_jsonl(buf.as_slice(), ScoreDirection::LowerIsBetter).unwrap();
    let a = IctMatrix::aggregate(&hi, &tasks(), AggregateOptions::default()).unwrap();
    let b = IctMatrix::aggregate(&lo, &tasks(), AggregateOptions::default()).unwrap();
    assert!((a.values() + b.values()).amax() < 1e-12);
}

#[test]
fn missing_pairs_error_or_impute() {
    let recs: Vec<TransferRecord> = records().into_iter().filter(|r| !(r.source.as_str() == "a1" && r.target.as_str() == "b2")).collect();
    let err = IctMatrix::aggregate(&recs, &tasks(), AggregateOptions::default()).unwrap_err();
    assert!(matches!(err, BentoError::MissingPairs(ref p) if p == &[("a1".to_string(), "b2".to_string())]));
    let opts = AggregateOptions { missing: MissingPairPolicy::ImputeColumnMean, ..Default::default() };
    let a = IctMatrix::aggregate(&recs, &tasks(), opts).unwrap();
    let col: Vec<f64> = (1..6).map(|i| a.get(i, 4)).collect();
    assert!((a.get(0, 4) - col.iter().sum::<f64>() / 5.0).abs() < 1e-12);
}

#[test]
fn artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let a = IctMatrix::aggregate(&records(), &tasks(), AggregateOptions::default()).unwrap().zscore_columns().unwrap();
    let path = dir.path().join("matrix.csv");
    a.save(&path, Some("abc")).unwrap();
    assert!(sidecar_path(&path).exists());
    let back = IctMatrix::load(&path).unwrap();
    assert_eq!(back.values(), a.values());
    assert_eq!(back.normalization(), Normalization::Zscored);

    let s = kernel_similarity(&a, &PipelineOptions::default()).unwrap();
    let spath = dir.path().join("similarity.csv");
    s.save(&spath, Some(DistanceMetric::Euclidean), None).unwrap();
    let s2 = SimilarityMatrix::load(&spath).unwrap();
    assert_eq!(s2.values(), s.values());
    assert_eq!(s2.kind(), s.kind());
}
