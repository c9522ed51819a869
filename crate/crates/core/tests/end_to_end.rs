use subspace_cpd::evaluation::{run_benchmark, BenchmarkCell, BenchmarkOptions};
use subspace_cpd::io::{matrix_to_csv, write_atomic, TruthDocument};
use subspace_cpd::pipeline::{run_detect, run_pipeline, PipelineOptions, RunConfig, Stopping};
use subspace_cpd::simulation::{generate, Scenario, SyntheticSpec};

fn benchmark_series(seed: u64) -> (tempfile::TempDir, std::path::PathBuf, Vec<usize>) {
    let spec = SyntheticSpec::benchmark(20, 2, Scenario::A, seed);
    let (x, truth) = generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    write_atomic(&path, &matrix_to_csv(x.values()).unwrap()).unwrap();
    (dir, path, truth.changepoints)
}

#[test]
fn automatic_run_finds_the_planted_changes() {
    let (_dir, path, truth) = benchmark_series(5);
    let mut cfg = RunConfig::new(&path);
    cfg.d = Some(2);
    let doc = run_detect(&cfg).unwrap();
    assert_eq!(doc.changepoints.len(), truth.len());
    for (a, b) in doc.changepoints.iter().zip(&truth) {
        assert!(a.abs_diff(*b) <= 2, "{a} vs {b}");
    }
    assert!(doc.provenance.lambda_estimated);
    assert_eq!(doc.segments.len(), 5);
    assert_eq!(doc.segments[0].first, 1);
    assert_eq!(doc.segments[4].last, 500);
    assert_eq!(doc.loss_curve[0].k, 0);
    assert!(doc.mu.unwrap() > 0.0);
}

#[test]
fn result_document_survives_json() {
    let (_dir, path, _) = benchmark_series(6);
    let mut cfg = RunConfig::new(&path);
    cfg.mu = Some(1.0);
    let doc = run_detect(&cfg).unwrap();
    let text = serde_json::to_string(&doc).unwrap();
    let back: subspace_cpd::pipeline::ResultDocument = serde_json::from_str(&text).unwrap();
    assert_eq!(back, doc);
    assert_eq!(doc.d, 2);
}

#[test]
fn grid_and_exhaustive_agree_on_clear_changes() {
    let spec = SyntheticSpec {
        changepoints: vec![150, 320],
        ..SyntheticSpec::benchmark(20, 2, Scenario::A, 14)
    };
    let (x, _) = generate(&spec).unwrap();
    let exhaustive = run_pipeline(
        &x,
        Some(2),
        None,
        Stopping::KnownK(2),
        &PipelineOptions::default(),
    )
    .unwrap();
    let grid = PipelineOptions {
        grid_mode: true,
        ..Default::default()
    };
    let coarse = run_pipeline(&x, Some(2), None, Stopping::KnownK(2), &grid).unwrap();
    assert_eq!(
        exhaustive.segmentation.changepoints,
        coarse.segmentation.changepoints
    );
}

#[test]
fn benchmark_is_reproducible() {
    let cells = [BenchmarkCell {
        p: 10,
        d: 2,
        scenario: Scenario::C,
    }];
    let opts = BenchmarkOptions {
        replications: 3,
        base_seed: 11,
        ..Default::default()
    };
    let a = run_benchmark(&cells, &opts).unwrap();
    let b = run_benchmark(&cells, &opts).unwrap();
    assert_eq!(
        serde_json::to_vec(&a).unwrap(),
        serde_json::to_vec(&b).unwrap()
    );
    assert_eq!(a.rows[0].replications, 3);
    assert!(a.rows[0].tnc_count <= 3);
}

#[test]
fn truth_document_matches_generator() {
    let spec = SyntheticSpec::benchmark(8, 2, Scenario::B, 1);
    let (x, truth) = generate(&spec).unwrap();
    let doc = TruthDocument::new(&spec, &truth);
    assert_eq!((doc.n, doc.p), (x.len(), x.dim()));
    assert_eq!(doc.labels.len(), 500);
    assert_eq!(doc.changepoints, vec![100, 200, 300, 400]);
}
