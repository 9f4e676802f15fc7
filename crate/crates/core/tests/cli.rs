use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use advreg::data::DatasetFile;

fn advreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advreg")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Writes a small SEU corpus and returns its directory.
fn corpus(root: &Path, extra: &[&str]) -> PathBuf {
    let dir = root.join("data");
    let d = s(&dir);
    let mut args = vec!["generate", "--dev-questions", "30", "--out", &d];
    if !extra.contains(&"--train-questions") {
        args.extend(["--train-questions", "90"]);
    }
    args.extend_from_slice(extra);
    let o = advreg(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

fn assert_error_line(o: &Output, exit: i32, error: &str, kind: &str) {
    assert_eq!(code(o), exit, "{}", stderr(o));
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error={error} kind={kind} message=\"")), "{err}");
}

#[test]
fn help_succeeds_and_missing_subcommand_is_usage() {
    assert_eq!(code(&advreg(&["--help"])), 0);
    assert_eq!(code(&advreg(&["train", "--help"])), 0);
    assert_eq!(code(&advreg(&[])), 1);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_error_line(&advreg(&["train", "--bogus"]), 1, "usage", "usage");
    assert_error_line(&advreg(&["train", "--task", "qa"]), 1, "usage", "usage");
}

#[test]
fn missing_input_is_a_data_error() {
    let o = advreg(&["eval", "--checkpoint", "/nonexistent/ckpt.json", "--data", "/nonexistent/dev.json"]);
    assert_error_line(&o, 2, "io", "data");
}

#[test]
fn bad_and_non_finite_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), &[]);
    let train = s(&data.join("train.json"));
    let out = s(&tmp.path().join("run"));
    let o = advreg(&["train", "--train", &train, "--learning-rate", "-1", "--epochs", "1", "--out", &out]);
    assert_error_line(&o, 1, "invalid_config", "usage");
    let o = advreg(&["train", "--train", &train, "--da", "--out", &out]);
    assert_error_line(&o, 1, "invalid_config", "usage");
    let o = advreg(&["train", "--train", &train, "--learning-rate", "1e300", "--epochs", "1", "--hidden-dim", "8", "--out", &out]);
    assert_error_line(&o, 3, "non_finite_value", "numeric");
}

#[test]
fn augmentation_must_cover_the_training_file() {
    let tmp = tempfile::tempdir().unwrap();
    let a = corpus(&tmp.path().join("a"), &["--seed", "1"]);
    let b = corpus(&tmp.path().join("b"), &["--seed", "2", "--train-questions", "60"]);
    let o = advreg(&[
        "train",
        "--train",
        &s(&a.join("train.json")),
        "--da",
        "--augment",
        &s(&b.join("train.json")),
        "--out",
        &s(&tmp.path().join("run")),
    ]);
    assert_error_line(&o, 2, "invalid_dataset", "data");
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), &[]);
    let config = tmp.path().join("run.conf");
    fs::write(&config, "# small run\nepochs = 3\nlearning_rate = 0.05\nhidden_dim = 8\nat = true\n").unwrap();
    let out = tmp.path().join("run");
    let o = advreg(&[
        "train",
        "--config",
        &s(&config),
        "--train",
        &s(&data.join("train.json")),
        "--epochs",
        "1",
        "--out",
        &s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let written = fs::read_to_string(out.join("config.txt")).unwrap();
    for line in ["epochs = 1", "learning_rate = 0.05", "hidden_dim = 8", "at = true", "batch_size = 24", "epsilon = 0.01"] {
        assert!(written.lines().any(|l| l == line), "missing '{line}' in\n{written}");
    }
    let log = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert!(log.lines().all(|l| l.contains("\"epoch\":0")));
}

#[test]
fn eval_leaves_inputs_untouched_and_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), &[]);
    let run = tmp.path().join("run");
    let dev = data.join("dev.json");
    let o = advreg(&[
        "train",
        "--train",
        &s(&data.join("train.json")),
        "--dev",
        &s(&dev),
        "--epochs",
        "1",
        "--hidden-dim",
        "8",
        "--out",
        &s(&run),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = run.join("checkpoint.json");
    let before = (fs::read(&ckpt).unwrap(), fs::read(&dev).unwrap());
    let out = tmp.path().join("eval");
    let o = advreg(&["eval", "--checkpoint", &s(&ckpt), "--data", &s(&dev), "--out", &s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(before, (fs::read(&ckpt).unwrap(), fs::read(&dev).unwrap()));
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["metrics"]["f1"].is_number());
    assert!(out.join("predictions.json").exists());
    let o = advreg(&["eval", "--checkpoint", &s(&ckpt), "--data", &s(&dev), "--threshold", "later"]);
    assert_error_line(&o, 1, "usage", "usage");
}

#[test]
fn augment_with_zero_targets_adds_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), &[]);
    let out = tmp.path().join("aug.json");
    let o = advreg(&[
        "augment",
        "--data",
        &s(&data.join("train.json")),
        "--gazetteer",
        &s(&data.join("gazetteer.tsv")),
        "--shuffle",
        "0",
        "--replace",
        "0",
        "--out",
        &s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let before = DatasetFile::load(data.join("train.json")).unwrap();
    let after = DatasetFile::load(&out).unwrap();
    assert_eq!(before.num_questions(), after.num_questions());
}

#[test]
fn generate_replays_by_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = corpus(&tmp.path().join("a"), &["--seed", "4"]);
    let b = corpus(&tmp.path().join("b"), &["--seed", "4"]);
    let c = corpus(&tmp.path().join("c"), &["--seed", "5"]);
    let read = |d: &Path| fs::read(d.join("train.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn gradcheck_reports_failures_as_numeric() {
    let o = advreg(&["gradcheck", "--instances", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8(o.stdout).unwrap().lines().any(|l| l.starts_with("PASS span_loss")));
    let o = advreg(&["gradcheck", "--instances", "2", "--tolerance", "1e-300"]);
    assert_error_line(&o, 3, "gradient_check_failed", "numeric");
}

#[test]
fn multiple_choice_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), &["--task", "mc"]);
    let o = advreg(&[
        "train",
        "--task",
        "mc",
        "--train",
        &s(&data.join("train.json")),
        "--dev",
        &s(&data.join("dev.json")),
        "--at",
        "--vat",
        "--epochs",
        "1",
        "--hidden-dim",
        "8",
        "--out",
        &s(&tmp.path().join("run")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let config = fs::read_to_string(tmp.path().join("run/config.txt")).unwrap();
    assert!(config.contains("epsilon = 0.001"));
    let o = advreg(&["train", "--task", "mc", "--train", &s(&data.join("train.json")), "--nel", "--out", &s(&tmp.path().join("x"))]);
    assert_error_line(&o, 1, "invalid_config", "usage");
}

#[test]
fn converged_model_fits_its_easy_training_set() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(
        tmp.path(),
        &["--task", "se", "--train-questions", "120", "--label-noise", "0", "--rare-fraction", "0", "--facts-per-passage", "3"],
    );
    let config = tmp.path().join("easy.conf");
    fs::write(&config, "task = se\noptimizer = adam\nlearning_rate = 0.005\nbatch_size = 8\nepochs = 100\nhidden_dim = 16\n").unwrap();
    let train = data.join("train.json");
    let run = tmp.path().join("run");
    let o = advreg(&["train", "--config", &s(&config), "--train", &s(&train), "--out", &s(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = advreg(&["eval", "--checkpoint", &s(&run.join("checkpoint.json")), "--data", &s(&train)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let em = report["metrics"]["em"].as_f64().unwrap();
    assert!(em >= 0.95, "training-set EM {em}");
}
