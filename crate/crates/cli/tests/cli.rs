use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_map-prune"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    let body = format!(
        "epochs = 4\nbatch_size = 16\nsynthetic_classes = 3\nsynthetic_dim = 8\nsynthetic_per_class = 30\n\
         synthetic_test_per_class = 10\nhidden = [12]\nprune_start_epoch = 1\nprune_ramp_epochs = 2\n\
         exploit_epoch = 3\nmask_freq = 4\n{extra}"
    );
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_writes_outputs_and_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("run");
    let o = run(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["epochs"], 4);
    for f in ["metrics.csv", "summary.json", "config.toml", "final.ckpt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "unknown_key = 3\n");
    assert_eq!(run(&["train", "--config", &bad]).status.code(), Some(2));

    let bad = write_config(dir.path(), "target_ratio = 1.5\n");
    assert_eq!(run(&["train", "--config", &bad]).status.code(), Some(2));

    let missing = dir.path().join("absent.toml");
    assert_eq!(run(&["train", "--config", missing.to_str().unwrap()]).status.code(), Some(2));

    let cfg = write_config(dir.path(), "");
    let o = run(&["sweep", "--config", &cfg, "--axis", "z", "--values", ""]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["sweep", "--config", &cfg, "--axis", "depth", "--values", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["analyze", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let cfg = write_config(dir.path(), "");
    let o = run(&["train", "--config", &cfg, "--resume", dir.path().join("nope.ckpt").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("sweep");
    let o = run(&[
        "sweep", "--config", &cfg, "--axis", "variant", "--values", "B,D", "--seeds", "2", "--cross-exploit", "--jobs",
        "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["n_seeds"] == 2));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);

    let runs: Vec<String> = ["exploit", "explore"]
        .iter()
        .map(|p| out.join("variant=D").join(p).join("seed1").to_str().unwrap().to_string())
        .collect();
    let report_dir = dir.path().join("report");
    let o = run(&["analyze", &runs[0], &runs[1], "--out", report_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
    assert_eq!(report["exploit_deltas"].as_array().unwrap().len(), 1);
    assert!(report_dir.join("mask_change_series.csv").exists());
}

#[test]
fn resume_continues_an_interrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "checkpoint_every = 2\n");
    let full = dir.path().join("full");
    assert!(run(&["train", "--config", &cfg, "--out", full.to_str().unwrap()]).status.success());
    let ckpt = full.join("epoch2.ckpt");
    assert!(ckpt.exists());

    // A second directory holding only what existed at epoch 2.
    let part = dir.path().join("part");
    std::fs::create_dir_all(&part).unwrap();
    let metrics = std::fs::read_to_string(full.join("metrics.csv")).unwrap();
    let upto: String = metrics
        .lines()
        .enumerate()
        .filter(|(i, l)| *i == 0 || l.split(',').next().unwrap().parse::<u32>().unwrap() < 2)
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    std::fs::write(part.join("metrics.csv"), upto).unwrap();
    let o = run(&["train", "--config", &cfg, "--out", part.to_str().unwrap(), "--resume", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(full.join("metrics.csv")).unwrap(),
        std::fs::read(part.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(full.join("final.ckpt")).unwrap(),
        std::fs::read(part.join("final.ckpt")).unwrap()
    );
}

#[test]
fn gen_data_writes_parseable_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = run(&[
        "gen-data", "--out", out.to_str().unwrap(), "--classes", "3", "--per-class", "7", "--test-per-class", "2",
        "--dim", "5", "--seed", "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let images = std::fs::read(out.join("train-images-idx3-ubyte")).unwrap();
    assert_eq!(&images[..4], [0, 0, 8, 3]);
    assert_eq!(u32::from_be_bytes(images[4..8].try_into().unwrap()), 21);
    let labels = std::fs::read(out.join("t10k-labels-idx1-ubyte")).unwrap();
    assert_eq!(labels.len(), 8 + 6);

    // a config pointing at the generated files trains
    let cfg = write_config(
        dir.path(),
        &format!(
            "data = \"idx\"\ntrain_images = \"{0}/train-images-idx3-ubyte\"\ntrain_labels = \"{0}/train-labels-idx1-ubyte\"\n\
             test_images = \"{0}/t10k-images-idx3-ubyte\"\ntest_labels = \"{0}/t10k-labels-idx1-ubyte\"\n",
            out.display()
        ),
    );
    assert!(run(&["train", "--config", &cfg]).status.success());
}
