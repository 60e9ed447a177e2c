use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
n_splits = 2

[gbt]
max_depths = [3]
n_trees = [20]
learning_rates = [0.1]
min_samples_leaf = 5
validation_fraction = 0.2

[simulation]
rounds = 3
actions_per_round = 40
"#;

fn cdainv(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdainv"))
        .args(args)
        .current_dir(dir)
        .env_remove("CDAINV_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_config(dir: &Path) {
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = cdainv(&["simulate", "--seed", "7", "--markets", "20", "--out", out], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (a, b) = (tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    assert!(a.contains_key("corpus/events.csv") && a.contains_key("corpus/manifest.json"));
    assert_eq!(a, b);
}

#[test]
fn different_seeds_give_different_corpora() {
    let tmp = tempfile::tempdir().unwrap();
    for (out, seed) in [("a", "1"), ("b", "2")] {
        assert!(cdainv(&["simulate", "--seed", seed, "--markets", "4", "--out", out], tmp.path()).status.success());
    }
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("corpus/events.csv")).unwrap();
    assert_ne!(read("a"), read("b"));
}

#[test]
fn evaluate_without_predictions_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cdainv(&["evaluate", "--out", "nothing"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cdainv predict"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cdainv(&["run", "--no-such-flag"], tmp.path()).status.code(), Some(1));
    assert_eq!(cdainv(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(cdainv(&[], tmp.path()).status.code(), Some(1));
    std::fs::write(tmp.path().join("bad.toml"), "n_splits = 3\nsplitz = 4\n").unwrap();
    let o = cdainv(&["featurize", "--config", "bad.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("splitz"), "{}", stderr(&o));
    assert_eq!(cdainv(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn output_root_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cdainv"))
        .args(["simulate", "--markets", "2"])
        .current_dir(tmp.path())
        .env("CDAINV_OUTPUT_ROOT", "from-env")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("from-env/corpus/events.csv").exists());
}

#[test]
fn ingest_reports_integrity_errors_with_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("t.csv"), "market_id,feedback_setting,price_rule\nm1,Full,First\n").unwrap();
    std::fs::write(d.join("e.csv"), "market_id,round,time,actor_id,side,price\nm1,1,0,b,B,5\nm1,1,1,s,S,6\n").unwrap();
    std::fs::write(
        d.join("d.csv"),
        "market_id,round,time,buyer_id,seller_id,price,buyer_price,seller_price\nm1,1,2,nobody,s,6,6,6\n",
    )
    .unwrap();
    let o = cdainv(&["ingest", "--events", "e.csv", "--deals", "d.csv", "--treatments", "t.csv", "--out", "o"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("d.csv:2") && stderr(&o).contains("nobody"), "{}", stderr(&o));
}

#[test]
fn full_pipeline_runs_and_checks_config_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_config(d);
    let o = cdainv(&["run", "--config", "small.toml", "--markets", "8", "--seed", "3", "--out", "o"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let files = tree(&d.join("o"));
    for f in [
        "run_config.json",
        "features.csv",
        "splits.csv",
        "predictions.csv",
        "tables/ae_ape.csv",
        "tables/cep_ape.csv",
        "tables/comparisons_ae.csv",
        "tables/cemh_coefficients.csv",
        "diagnostics/importance.csv",
        "ablation/orderbook-only.csv",
        "models/split_000/GBT_CEP.json",
        "report.json",
    ] {
        assert!(files.contains_key(f), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&files["report.json"]).unwrap();
    assert_eq!(report["seed"], 3);
    assert_eq!(report["corpus"]["markets"], 8);
    let listed = report["files"].as_object().unwrap();
    assert_eq!(listed.len(), files.len() - 1);
    let first_line = |f: &str| String::from_utf8_lossy(&files[f]).lines().next().unwrap().to_string();
    let hash = report["config_hash"].as_str().unwrap();
    assert_eq!(first_line("predictions.csv"), format!("# schema_version=1 config_hash={hash} seed=3"));

    // a later stage under a different configuration refuses stale inputs
    let o = cdainv(&["evaluate", "--config", "small.toml", "--seed", "4", "--out", "o"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config_hash"), "{}", stderr(&o));

    // stages rerun one at a time reproduce the tree
    for stage in ["featurize", "fit", "predict", "evaluate", "ablate", "report"] {
        let o = cdainv(&[stage, "--config", "small.toml", "--markets", "8", "--seed", "3", "--out", "o", "--jobs", "1"], d);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    assert_eq!(tree(&d.join("o")), files);
}

#[test]
fn fitting_without_valuations_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_config(d);
    assert!(cdainv(&["simulate", "--config", "small.toml", "--markets", "4", "--out", "sim"], d).status.success());
    let c = d.join("sim/corpus");
    let o = cdainv(
        &[
            "ingest",
            "--config",
            "small.toml",
            "--events",
            c.join("events.csv").to_str().unwrap(),
            "--deals",
            c.join("deals.csv").to_str().unwrap(),
            "--treatments",
            c.join("treatments.csv").to_str().unwrap(),
            "--out",
            "o",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(cdainv(&["featurize", "--config", "small.toml", "--out", "o"], d).status.success());
    let o = cdainv(&["fit", "--config", "small.toml", "--out", "o"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("valuations"), "{}", stderr(&o));
}
