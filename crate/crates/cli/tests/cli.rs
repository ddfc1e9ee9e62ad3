use std::path::Path;
use std::process::{Command, Output};

use catsketch::subspace::{init_subspace, read_checkpoint};

fn catsketch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catsketch")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = catsketch(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn small(dir: &Path) -> Vec<String> {
    [
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "data.dim=10",
        "--set",
        "data.len=60",
        "--set",
        "data.rank=2",
        "--set",
        "train.rank=2",
        "--set",
        "learn_sigma=2.0",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn args<'a>(head: &[&'a str], tail: &'a [String]) -> Vec<&'a str> {
    head.iter().copied().chain(tail.iter().map(String::as_str)).collect()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn generate_default_protocol_has_full_entry_count() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate", "--out", dir.path().to_str().unwrap()]);
    let meta: serde_json::Value = serde_json::from_str(&read(&dir.path().join("stream.json"))).unwrap();
    assert_eq!(meta["entries"], 125_000);
    assert_eq!(meta["dim"], 25);
    assert_eq!(meta["len"], 5000);
    for f in ["stream.csv", "truth_u.csv", "truth_sketches.csv", "truth_labels.csv", "config.toml"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn generate_is_reproducible_and_masks_by_p() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (sa, sb) = (small(a.path()), small(b.path()));
    ok(&args(&["generate", "--set", "data.p=0.5"], &sa));
    ok(&args(&["generate", "--set", "data.p=0.5"], &sb));
    for f in ["stream.csv", "stream.json", "truth_labels.csv"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    let meta: serde_json::Value = serde_json::from_str(&read(&a.path().join("stream.json"))).unwrap();
    let n = meta["entries"].as_u64().unwrap();
    assert!(n > 200 && n < 400, "{n}");
}

#[test]
fn frozen_step_keeps_the_initial_subspace() {
    let dir = tempfile::tempdir().unwrap();
    let s = small(dir.path());
    ok(&args(&["train", "--set", "train.step.mu=0.0", "--seed", "5"], &s));
    let (u, header) = read_checkpoint(&dir.path().join("subspace.txt")).unwrap();
    assert_eq!(header.t, 60);
    assert_eq!(u, init_subspace(10, 2, 5).unwrap());
    let trace = read(&dir.path().join("trace.csv"));
    assert!(trace.starts_with("t,pass,grad_norm,cost,data_loss,u_norm_sq,delta_u,inner_iters,fell_back\n"));
    assert_eq!(trace.lines().count(), 61);
}

#[test]
fn train_then_evaluate_and_rerun_from_echoed_config() {
    let dir = tempfile::tempdir().unwrap();
    let s = small(dir.path());
    ok(&args(&["train", "--set", "data.p=0.7", "--set", "train.passes=2"], &s));
    let metrics: serde_json::Value = serde_json::from_str(&read(&dir.path().join("metrics.json"))).unwrap();
    assert!(metrics["regret"]["regret"].is_number());
    assert!(metrics["rmse"]["per_entry"].as_f64().unwrap() >= 0.0);
    assert!(metrics["classification_error"].as_f64().unwrap() <= 1.0);

    let cfg = dir.path().join("config.toml");
    let ck = dir.path().join("subspace.txt");
    ok(&["evaluate", "--config", cfg.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()]);
    let eval: serde_json::Value = serde_json::from_str(&read(&dir.path().join("evaluation.json"))).unwrap();
    assert_eq!(eval["final_cost"], metrics["final_cost"]);
    assert_eq!(eval["regret"], metrics["regret"]);
    assert_eq!(eval["rmse"], metrics["rmse"]);

    let again = tempfile::tempdir().unwrap();
    ok(&["train", "--config", cfg.to_str().unwrap(), "--out", again.path().to_str().unwrap()]);
    for f in ["subspace.txt", "sketches.csv", "trace.csv"] {
        assert_eq!(read(&dir.path().join(f)), read(&again.path().join(f)), "{f}");
    }
}

#[test]
fn threshold_learning_adds_eta_column() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&[
        "train",
        "--out",
        d,
        "--set",
        "data.source=\"binary\"",
        "--set",
        "data.len=40",
        "--set",
        "data.dim=8",
        "--set",
        "train.rank=2",
        "--set",
        "learn_sigma=1.0",
        "--set",
        "train.threshold.eta0=0.5",
    ]);
    let trace = read(&dir.path().join("trace.csv"));
    assert!(trace.lines().next().unwrap().contains(",eta,eta_grad,"));
    let (_, header) = read_checkpoint(&dir.path().join("subspace.txt")).unwrap();
    assert!(header.eta.is_some());
}

#[test]
fn impute_passes_observed_entries_through() {
    let dir = tempfile::tempdir().unwrap();
    let s = small(dir.path());
    ok(&args(&["generate", "--set", "data.p=0.6"], &s));
    ok(&args(&["train", "--set", "data.p=0.6"], &s));
    let cfg = dir.path().join("config.toml");
    let ck = dir.path().join("subspace.txt");
    let input = dir.path().join("stream.csv");
    ok(&["impute", "--config", cfg.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap(), "--input", input.to_str().unwrap()]);
    let stream = catsketch::data::read_stream(&input).unwrap();
    let pred = read(&dir.path().join("imputed.csv"));
    let mut lines = pred.lines();
    assert_eq!(lines.next(), Some("t,i,y,observed"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 600);
    let levels = [1.0, 2.0, 3.0, 4.0, 5.0];
    for r in &rows {
        let (t, i, y): (usize, usize, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap());
        let obs = stream.data[t - 1].dense(10)[i - 1];
        assert_eq!(r[3] == "1", obs.is_some());
        if let Some(v) = obs {
            assert_eq!(v, y);
        }
        assert!(levels.contains(&y));
    }
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let s = small(dir.path());
    ok(&args(&["sweep", "--p", "0.5,1.0", "--rank", "1,2", "--threads", "1"], &s));
    let text = read(&dir.path().join("sweep.csv"));
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("p,rank,"));
}

#[test]
fn bad_input_fails_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = catsketch(&["train", "--out", d, "--set", "train.rank=0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    let out = catsketch(&["generate", "--out", d, "--set", "data.source=\"movielens\"", "--set", "data.path=\"/nope\""]);
    assert!(!out.status.success());
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nrank = \"eight\"\n").unwrap();
    let out = catsketch(&["train", "--config", cfg.to_str().unwrap(), "--out", d]);
    assert!(!out.status.success());
}
