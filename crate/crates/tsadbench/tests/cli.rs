//! End-to-end command-line tests through the compiled binary.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tsadbench"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(
        &path,
        "[synth]\n\
         train_runs = 6\n\
         test_runs_per_fault = 5\n\
         len = 120\n\
         dims = 4\n\
         fault_kinds = step\n\
         fault_onset = 60\n\
         fault_magnitude = 5.0\n\
         \n\
         [detectors]\n\
         epochs = 5\n\
         window = 16\n\
         hidden_size = 8\n\
         latent_dim = 3\n\
         stride = 2\n\
         \n\
         [benchmark]\n\
         budget_seconds = 120\n\
         folds = 5\n\
         seed = 7\n",
    )
    .unwrap();
    path
}

#[test]
fn generate_writes_schema_and_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    for sub in ["a", "b"] {
        let status = bin()
            .args(["generate", "--config"])
            .arg(&config)
            .args(["--seed", "9", "--out"])
            .arg(dir.path().join(sub))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let train_a = std::fs::read(dir.path().join("a/train.csv")).unwrap();
    let train_b = std::fs::read(dir.path().join("b/train.csv")).unwrap();
    assert_eq!(train_a, train_b);
    let header = String::from_utf8(train_a[..60].to_vec()).unwrap();
    assert!(header.starts_with("fault_id,run_id,timestep,label,x1,x2"));
}

#[test]
fn invalid_fault_kind_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    std::fs::write(&config, "[synth]\nfault_kinds = wobble\n").unwrap();
    let output = bin()
        .args(["generate", "--config"])
        .arg(&config)
        .args(["--seed", "1", "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("wobble"));
}

#[test]
fn missing_seed_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["generate", "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("seed"));
}

#[test]
fn benchmark_rerun_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    for sub in ["r1", "r2"] {
        let status = bin()
            .args(["benchmark", "--config"])
            .arg(&config)
            .args(["--detectors", "dense_ae,untrained_lstm_ae", "--out"])
            .arg(dir.path().join(sub))
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    let ranking1 = std::fs::read(dir.path().join("r1/ranking.csv")).unwrap();
    let ranking2 = std::fs::read(dir.path().join("r2/ranking.csv")).unwrap();
    assert_eq!(ranking1, ranking2);
    let results1 = std::fs::read(dir.path().join("r1/results.jsonl")).unwrap();
    let results2 = std::fs::read(dir.path().join("r2/results.jsonl")).unwrap();
    assert_eq!(results1, results2);

    let ranking = String::from_utf8(ranking1).unwrap();
    assert!(ranking.starts_with(
        "Method,Method Type,F1-Score,F1-Score Ranking,AUPRC,AUPRC Ranking,Total Ranking\n"
    ));
    assert_eq!(ranking.lines().count(), 3);
}

#[test]
fn train_score_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());

    let status = bin()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--detector", "dense_ae", "--seed", "7", "--out"])
        .arg(dir.path().join("models"))
        .status()
        .unwrap();
    assert!(status.success());

    // build a single-run labeled file from the generator
    let status = bin()
        .args(["generate", "--config"])
        .arg(&config)
        .args(["--seed", "7", "--out"])
        .arg(dir.path().join("data"))
        .status()
        .unwrap();
    assert!(status.success());
    let test_csv = std::fs::read_to_string(dir.path().join("data/test.csv")).unwrap();
    let mut one_run = String::new();
    for (i, line) in test_csv.lines().enumerate() {
        if i == 0 || line.starts_with("1,0,") {
            one_run.push_str(line);
            one_run.push('\n');
        }
    }
    let one_run_path = dir.path().join("one_run.csv");
    std::fs::write(&one_run_path, one_run).unwrap();

    let status = bin()
        .args(["score", "--model"])
        .arg(dir.path().join("models/dense_ae.model"))
        .arg("--data")
        .arg(&one_run_path)
        .arg("--out")
        .arg(dir.path().join("scored"))
        .status()
        .unwrap();
    assert!(status.success());

    let scores = std::fs::read_to_string(dir.path().join("scored/scores.csv")).unwrap();
    assert!(scores.starts_with("timestep,score\n"));
    assert_eq!(scores.lines().count(), 121); // header + 120 steps

    let output = bin()
        .args(["evaluate", "--scores"])
        .arg(dir.path().join("scored/scores.csv"))
        .arg("--labels")
        .arg(&one_run_path)
        .arg("--out")
        .arg(dir.path().join("eval"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval/report.json")).unwrap())
            .unwrap();
    assert!(report["best_f1"].as_f64().unwrap() > 0.5);
    assert!(report["auprc"].as_f64().unwrap() > 0.5);
    assert!(dir.path().join("eval/pr_curve.csv").exists());

    // evaluate is pure: byte-identical report on rerun
    let rerun = bin()
        .args(["evaluate", "--scores"])
        .arg(dir.path().join("scored/scores.csv"))
        .arg("--labels")
        .arg(&one_run_path)
        .output()
        .unwrap();
    assert_eq!(output.stdout, rerun.stdout);
}

#[test]
fn score_length_mismatch_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("scores.csv"), "timestep,score\n0,1.0\n1,2.0\n").unwrap();
    std::fs::write(
        dir.path().join("labels.csv"),
        "fault_id,run_id,timestep,label,x1\n1,0,0,0,0.1\n1,0,1,1,0.2\n1,0,2,1,0.3\n",
    )
    .unwrap();
    let output = bin()
        .args(["evaluate", "--scores"])
        .arg(dir.path().join("scores.csv"))
        .arg("--labels")
        .arg(dir.path().join("labels.csv"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn budget_floor_completes_each_method() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    // 1-second budget with a 2-point grid: each method still reports
    let grid_config = dir.path().join("grid.conf");
    let mut text = std::fs::read_to_string(&config).unwrap();
    text.push_str("\n[grid]\nhidden_size = 8,12\n");
    std::fs::write(&grid_config, text).unwrap();
    let output = bin()
        .args(["benchmark", "--config"])
        .arg(&grid_config)
        .args([
            "--detectors",
            "dense_ae",
            "--budget-seconds",
            "0.000001",
            "--out",
        ])
        .arg(dir.path().join("tight"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let results = std::fs::read_to_string(dir.path().join("tight/results.jsonl")).unwrap();
    assert!(results.contains("\"partial\":true"));
    assert!(String::from_utf8_lossy(&output.stderr).contains("budget"));
}
