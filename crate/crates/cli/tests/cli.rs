use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kgdrive::dataset::Dataset;
use kgdrive::value::{ScorerShape, ScorerWeights};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn kgdrive(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgdrive"))
        .args(args)
        .env_remove("KGDRIVE_ENDPOINT_URL")
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = kgdrive(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn graph(dir: &Path) -> PathBuf {
    let g = dir.join("graph.json");
    let corpus = data_dir().join("corpus");
    ok(&["build-graph", "--corpus", p(&corpus), "--out", p(&g)]);
    g
}

fn sha(path: &Path) -> String {
    kgdrive::seed::sha256_hex(&std::fs::read(path).unwrap())
}

#[test]
fn build_graph_counts_match_recount_and_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let g = graph(dir.path());
    let first = sha(&g);
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(g.with_extension("stats.json")).unwrap()).unwrap();
    let raw: serde_json::Value = serde_json::from_slice(&std::fs::read(&g).unwrap()).unwrap();
    let graph = &raw["graph"];
    let n_entities = graph["entities"].as_object().unwrap().len();
    let n_edges = graph["edges"].as_object().unwrap().len();
    let n_native = graph["native_nodes"].as_object().unwrap().len();
    assert_eq!(stats["entities"], n_entities);
    assert_eq!(stats["edges"], n_edges);
    assert_eq!(stats["nodes"], n_entities + n_native);
    ok(&["build-graph", "--corpus", p(&data_dir().join("corpus")), "--out", p(&g)]);
    assert_eq!(sha(&g), first);
}

#[test]
fn empty_corpus_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("corpus");
    std::fs::create_dir(&empty).unwrap();
    let out = kgdrive(&["build-graph", "--corpus", p(&empty), "--out", p(&dir.path().join("g.json"))]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn query_puddle_ranks_pedestrian_and_water_clauses() {
    let dir = tempfile::tempdir().unwrap();
    let g = graph(dir.path());
    let json = dir.path().join("q.json");
    let scenarios = data_dir().join("scenarios");
    ok(&["query", "--graph", p(&g), "--scenario", "puddle_pedestrian", "--scenarios", p(&scenarios), "--out", p(&json)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let top: Vec<String> =
        v["items"].as_array().unwrap().iter().take(4).map(|i| i["verbatim_text"].as_str().unwrap().to_lowercase()).collect();
    assert!(top.iter().any(|t| t.contains("pedestrian")));
    assert!(top.iter().any(|t| t.contains("water")));
}

#[test]
fn missing_graph_and_unknown_scenario_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgdrive(&["query", "--graph", p(&dir.path().join("nope.json")), "--scenario", "x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
    let g = graph(dir.path());
    let scenarios = data_dir().join("scenarios");
    let out = kgdrive(&["run", "--graph", p(&g), "--scenario", "nope", "--scenarios", p(&scenarios), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("puddle_pedestrian") && err.contains("tunnel_solid_line"), "{err}");
    let out = kgdrive(&["run", "--graph", p(&g), "--scenario", "empty_road", "--scenarios", p(&scenarios), "--policy", "bogus", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    let out = kgdrive(&["run", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dataset_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = graph(dir.path());
    let ds = dir.path().join("d.jsonl");
    ok(&["gen-dataset", "--graph", p(&g), "--scenes", "4", "--per-scene", "6", "--seed", "2", "--out", p(&ds)]);
    let first = sha(&ds);
    ok(&["gen-dataset", "--graph", p(&g), "--scenes", "4", "--per-scene", "6", "--seed", "2", "--out", p(&ds)]);
    assert_eq!(sha(&ds), first);

    let w1 = dir.path().join("w1.bin");
    let w2 = dir.path().join("w2.bin");
    let train = |w: &Path, epochs: &str| {
        ok(&["train-value", "--dataset", p(&ds), "--out", p(w), "--epochs", epochs, "--layers", "1", "--lr", "3e-3", "--batch-size", "4", "--seed", "4"])
    };
    train(&w1, "3");
    train(&w2, "3");
    assert_eq!(sha(&w1), sha(&w2));

    // zero predictor: MSE is the mean square of the labels
    let data = Dataset::from_jsonl(&std::fs::read_to_string(&ds).unwrap()).unwrap();
    let zero = dir.path().join("zero.bin");
    let shape = ScorerShape { c: data.header.config.planner.token_dim, layers: 1 };
    let mut bytes = Vec::new();
    ScorerWeights::zeros(shape).write_to(&mut bytes).unwrap();
    std::fs::write(&zero, bytes).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&ok(&["eval-value", "--dataset", p(&ds), "--weights", p(&zero), "--split", "all"])).unwrap();
    let labels: Vec<f64> = data.examples(&data.samples).iter().flat_map(|e| e.target.to_vec()).collect();
    let ms = labels.iter().map(|l| l * l).sum::<f64>() / labels.len() as f64;
    assert!((report["metrics"]["mse"].as_f64().unwrap() - ms).abs() < 1e-12);

    // long training overfits the train split
    let w3 = dir.path().join("w3.bin");
    train(&w3, "400");
    let report: serde_json::Value =
        serde_json::from_str(&ok(&["eval-value", "--dataset", p(&ds), "--weights", p(&w3), "--split", "train"])).unwrap();
    let mse = report["metrics"]["mse"].as_f64().unwrap();
    assert!(mse < 0.05, "train mse {mse}");
}

#[test]
fn run_writes_seeded_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let g = graph(dir.path());
    let scenarios = data_dir().join("scenarios");
    let out = dir.path().join("run");
    ok(&["run", "--graph", p(&g), "--scenario", "empty_road", "--scenarios", p(&scenarios), "--seed", "3", "--seed", "5", "--out", p(&out)]);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("empty_road,knowval,3,"));
    assert!(rows[2].starts_with("empty_road,knowval,5,"));
    let svg = std::fs::read_to_string(out.join("empty_road_knowval_s3.svg")).unwrap();
    assert!(svg.contains("seed 3 config_hash"));
    let trace = std::fs::read_to_string(out.join("empty_road_knowval_s5.trace.jsonl")).unwrap();
    assert!(trace.lines().next().unwrap().contains("\"seed\":5"));
}

#[test]
fn sweep_over_two_gammas_gives_two_suite_rows() {
    let dir = tempfile::tempdir().unwrap();
    let g = graph(dir.path());
    let scenarios = data_dir().join("scenarios");
    let csv = dir.path().join("sweep.csv");
    let stdout = ok(&[
        "sweep", "--graph", p(&g), "--scenarios", p(&scenarios), "--n-seeds", "1", "--gamma", "0.7", "--gamma", "1.0", "--out", p(&csv),
    ]);
    let suite: Vec<&str> = stdout.lines().filter(|l| l.starts_with("suite,")).collect();
    assert_eq!(suite.len(), 2);
    let file = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(file.lines().filter(|l| l.starts_with("suite,")).count(), 2);
}

#[test]
fn render_writes_svg_for_a_step() {
    let dir = tempfile::tempdir().unwrap();
    let g = graph(dir.path());
    let scenarios = data_dir().join("scenarios");
    let svg = dir.path().join("r.svg");
    ok(&["render", "--graph", p(&g), "--scenario", "puddle_pedestrian", "--scenarios", p(&scenarios), "--step", "1", "--out", p(&svg)]);
    let s = std::fs::read_to_string(&svg).unwrap();
    assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
    assert!(s.contains("stroke-width=\"4\""));
    let out = kgdrive(&["render", "--graph", p(&g), "--scenario", "puddle_pedestrian", "--scenarios", p(&scenarios), "--step", "9999", "--out", p(&svg)]);
    assert_eq!(out.status.code(), Some(1));
}
