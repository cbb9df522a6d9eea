use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vidrel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidrel")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("").to_string()
}

#[test]
fn missing_manifest_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = vidrel(&[
        "train",
        "--method",
        "omks",
        "--manifest",
        s(&dir.path().join("missing/manifest.json")),
        "--out",
        s(&dir.path().join("model")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error kind=data code=2 reason="));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"n_videos": 30, "nonsense": true}"#).unwrap();
    let out = vidrel(&["synth", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).contains("nonsense"));

    let out = vidrel(&["synth", "--out", s(dir.path()), "--clusters", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = vidrel(&["synth", "--n-videos", "lots"]);
    assert_eq!(out.status.code(), Some(1));
    let out = vidrel(&["synth"]);
    assert_eq!(out.status.code(), Some(1), "missing --out");
}

#[test]
fn exploding_training_exits_with_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert!(vidrel(&["synth", "--out", s(&corpus), "--n-videos", "40", "--clusters", "4"]).status.success());
    let out = vidrel(&[
        "train",
        "--method",
        "lstm",
        "--kernel",
        "rbf",
        "--lr",
        "1e300",
        "--hidden",
        "4",
        "--embed-dim",
        "4",
        "--max-triplets",
        "50",
        "--manifest",
        s(&corpus.join("manifest.json")),
        "--out",
        s(&dir.path().join("lstm")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("error kind=numeric code=3"));
}

#[test]
fn config_file_fills_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    fs::write(&cfg, r#"{"n-videos": 40, "clusters": 4, "seed": 3}"#).unwrap();
    let corpus = dir.path().join("corpus");
    let out = vidrel(&["synth", "--config", s(&cfg), "--out", s(&corpus), "--clusters", "5"]);
    assert!(out.status.success(), "{}", stderr_line(&out));
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(corpus.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 3);
    assert_eq!(run["config"]["synth"]["n_videos"], 40);
    assert_eq!(run["config"]["synth"]["clusters"], 5);
    assert!(run["timings"]["total_seconds"].is_number());
    let manifest = fs::read_to_string(corpus.join("manifest.json")).unwrap();
    assert_eq!(manifest.matches("\"id\"").count(), 40);
}

#[test]
fn oasis_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let (corpus, manifest, features) = (p("corpus"), p("corpus/manifest.json"), p("features"));
    let (model, rank, rankings, eval) = (p("oasis/model.bin"), p("rank"), p("rank/rankings.json"), p("eval"));
    let oasis = p("oasis");
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth", "--out", &corpus, "--n-videos", "60", "--clusters", "4"],
        vec!["featurize", "--manifest", &manifest, "--out", &features, "--delta"],
        vec![
            "train", "--method", "oasis", "--manifest", &manifest, "--features", &features, "--out", &oasis,
            "--max-triplets", "500",
        ],
        vec![
            "rank", "--manifest", &manifest, "--model", &model, "--features", &features, "--split", "test", "--out", &rank,
        ],
        vec!["eval", "--rankings", &rankings, "--out", &eval, "--hit-k", "1,5"],
    ];
    for args in &steps {
        let out = vidrel(args);
        assert!(out.status.success(), "{args:?}: {}", stderr_line(&out));
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["header"]["scorer"]["method"], "oasis");
    assert_eq!(report["header"]["anchor_split"], "test");
    assert_eq!(report["hit_at"].as_object().unwrap().len(), 2);
    let csv = fs::read_to_string(dir.path().join("eval/report.csv")).unwrap();
    assert!(csv.starts_with("method,kernel,hit@1,hit@5,recall@50"));

    // features written with delta statistics cannot be scored by a model
    // trained on plain features
    let (plain, rank2) = (p("plain"), p("rank2"));
    let out = vidrel(&["featurize", "--manifest", &manifest, "--out", &plain]);
    assert!(out.status.success());
    let out = vidrel(&["rank", "--manifest", &manifest, "--model", &model, "--features", &plain, "--out", &rank2]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_gemm_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = vidrel(&[
        "bench-gemm",
        "--sizes",
        "20x30x40,10x10x5",
        "--dim",
        "4",
        "--naive-rows",
        "0",
        "--threads",
        "2",
        "--out",
        s(dir.path()),
    ]);
    assert!(out.status.success(), "{}", stderr_line(&out));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("20,30,40,4,rbf,64,2,20,"));
    assert!(rows[1].ends_with(",0.000e0"));
}
