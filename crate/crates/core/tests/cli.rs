//! End-to-end runs of the binary on small synthetic data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use glassbox::data::{load_csv, Dataset};
use glassbox::splits::{generate_partitions, GroupInfo, SplitConfig};

fn glassbox(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glassbox"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

/// Writes a small synthetic train/test pair into `dir/data`.
fn synth(dir: &Path, rows: usize) -> PathBuf {
    fs::write(
        dir.join("synth.toml"),
        format!("[synth]\nn_rows = {rows}\nholdout_rows = 2000\nseed = 5\n"),
    )
    .unwrap();
    ok(&glassbox(&["synth", "--config", "synth.toml", "--out", "data"], dir));
    dir.join("data")
}

const RUN: &str = r#"
[paths]
data = "data/data.csv"
test_data = "data/test.csv"
schema = "data/schema.toml"
out = "run"

[train]
learning_rate = 0.5
outer_bags = 3
inner_bags = 1
max_bins = 8
min_samples_leaf = 40
interactions = 1

[baseline]
enabled = true

[metrics]
resamples = 100
min_bin_count = 50
"#;

#[test]
fn synth_train_evaluate_explain_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = synth(dir, 4000);
    for f in ["data.csv", "test.csv", "schema.toml", "spec.json", "resolved_config.toml"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    fs::write(dir.join("run.toml"), RUN).unwrap();
    ok(&glassbox(&["train", "--config", "run.toml"], dir));
    let run = dir.join("run");
    for f in [
        "model.json",
        "baseline.json",
        "training_log.tsv",
        "training_summary.json",
        "importance.tsv",
        "importance.svg",
        "shapes.svg",
        "shapes/lin.csv",
        "shapes/cat.svg",
        "resolved_config.toml",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }

    ok(&glassbox(&["evaluate", "--config", "run.toml"], dir));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    let labels: Vec<(String, String)> = metrics
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["dataset"].as_str().unwrap().into(), r["model"].as_str().unwrap().into()))
        .collect();
    assert_eq!(
        labels,
        [("train", "gam"), ("train", "logreg"), ("test", "gam"), ("test", "logreg")].map(|(a, b)| (a.to_string(), b.to_string()))
    );
    for r in metrics.as_array().unwrap() {
        let auroc = r["auroc"]["point"].as_f64().unwrap();
        assert!(auroc > 0.6, "{r}");
    }
    assert!(run.join("reliability_test.svg").is_file());

    ok(&glassbox(&["explain", "--config", "run.toml"], dir));
    let table = fs::read_to_string(run.join("explanations.tsv")).unwrap();
    assert_eq!(table.lines().count(), 21);
    // Every row's terms add up to its score.
    for line in table.lines().skip(1) {
        let v: Vec<f64> = line.split('\t').skip(1).map(|x| x.parse().unwrap()).collect();
        let (terms, tail) = v.split_at(v.len() - 2);
        assert!((terms.iter().sum::<f64>() - tail[0]).abs() < 1e-6);
    }
}

#[test]
fn rerun_gives_identical_model_document() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, 3000);
    fs::write(dir.join("run.toml"), RUN).unwrap();
    ok(&glassbox(&["train", "--config", "run.toml", "--out", "a"], dir));
    ok(&glassbox(&["train", "--config", "run.toml", "--out", "b"], dir));
    let a = fs::read(dir.join("a/model.json")).unwrap();
    assert_eq!(a, fs::read(dir.join("b/model.json")).unwrap());
    let resolved_a = fs::read_to_string(dir.join("a/resolved_config.toml")).unwrap();
    let resolved_b = fs::read_to_string(dir.join("b/resolved_config.toml")).unwrap();
    assert!(resolved_a.contains("out = \"a\""));
    assert_eq!(resolved_a.replace("out = \"a\"", "out = \"b\""), resolved_b);
}

#[test]
fn invalid_config_key_fails_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[train]\nlearning_rte = 0.1\n").unwrap();
    let out = glassbox(&["train", "--config", "bad.toml"], tmp.path());
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("invalid configuration") && err.contains("learning_rte"));
}

#[test]
fn single_class_test_set_degrades_to_calibration_only() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = synth(dir, 3000);
    let schema = glassbox::config::load_schema(&data.join("schema.toml")).unwrap();
    let test = load_csv(data.join("test.csv"), &schema).unwrap();
    let negatives = Dataset::new(schema, test.columns().to_vec(), vec![0; test.n_rows()], None).unwrap();
    negatives.write_csv(fs::File::create(data.join("negatives.csv")).unwrap()).unwrap();
    fs::write(dir.join("run.toml"), RUN.replace("test.csv", "negatives.csv")).unwrap();
    ok(&glassbox(&["train", "--config", "run.toml"], dir));
    ok(&glassbox(&["evaluate", "--config", "run.toml"], dir));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("run/metrics.json")).unwrap()).unwrap();
    let test_gam = &metrics[2];
    assert_eq!(test_gam["dataset"], "test");
    assert!(test_gam["auroc"].is_null());
    assert!(test_gam["auroc_error"].as_str().unwrap().contains("single class"));
    assert_eq!(test_gam["calibration"]["n_bins"], 10);
    let bins = test_gam["calibration"]["bins"].as_array().unwrap();
    assert!(!bins.is_empty() && bins.iter().all(|b| b["observed"] == 0.0));
}

#[test]
fn splits_command_matches_library_on_six_group_toy() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = String::from("[splits]\ntarget_test_frac = 0.5\ntol = 0.0\nmin_per_level_per_side = 1\n");
    let mut groups = Vec::new();
    for i in 0..6 {
        let level = 1 + i / 2;
        text += &format!("[[splits.groups]]\nid = \"g{i}\"\nlevel = {level}\nn_samples = 10\n");
        groups.push(GroupInfo {
            id: format!("g{i}"),
            level: level as u32,
            n_samples: 10,
        });
    }
    fs::write(tmp.path().join("s.toml"), text).unwrap();
    ok(&glassbox(&["splits", "--config", "s.toml"], tmp.path()));
    let plans: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/plans.json")).unwrap()).unwrap();
    let cfg = SplitConfig {
        target_test_frac: 0.5,
        tol: 0.0,
        min_per_level_per_side: 1,
        ..SplitConfig::default()
    };
    let expected = serde_json::to_value(generate_partitions(&groups, &cfg).unwrap()).unwrap();
    assert_eq!(plans, expected);
    assert_eq!(plans["plans"].as_array().unwrap().len(), 8);
}

#[test]
fn sweep_at_full_size_is_a_single_zero_distance() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, 2500);
    let cfg = RUN.to_string() + "\n[sweep]\nsizes = [2500]\nfeatures = [\"lin\"]\nseeds = [3]\n";
    fs::write(dir.join("run.toml"), cfg).unwrap();
    ok(&glassbox(&["sweep", "--config", "run.toml"], dir));
    let table = fs::read_to_string(dir.join("run/sweep_lin.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    let fields: Vec<&str> = rows[0].split('\t').collect();
    assert_eq!(fields[1], "2500");
    assert_eq!(fields[4].parse::<f64>().unwrap(), 0.0);
}
