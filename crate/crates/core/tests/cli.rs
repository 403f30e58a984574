//! The `gyrocal` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gyrocal::sensor_model::{generate_scenario, GyroErrorTerms};

const SMALL: [&str; 6] = [
    "--set",
    "corpus.n_scenarios=3",
    "--set",
    "train.epochs=2",
    "--set",
    "train.batch_size=8",
];

fn gyrocal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gyrocal")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_pair(dir: &Path, scale: f64, bias: f64, sigma: f64) -> (String, String) {
    let t = GyroErrorTerms::new(scale, bias, sigma).unwrap();
    let s = generate_scenario("x", 78.0, 6.0, 145.0, &t, 1).unwrap();
    let (up, down) = (dir.join("up.csv"), dir.join("down.csv"));
    s.up.write_csv(&up).unwrap();
    s.down.write_csv(&down).unwrap();
    (p(&up).to_owned(), p(&down).to_owned())
}

#[test]
fn baseline_calibrate_recovers_noiseless_truth() {
    let dir = tempfile::tempdir().unwrap();
    // values representable in 9 significant digits survive the CSV exactly
    let (up, down) = write_pair(dir.path(), 0.004, -0.05, 0.0);
    let out = gyrocal(&["calibrate", "--up", &up, "--down", &down]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let obj = json.as_object().unwrap();
    assert_eq!(obj.len(), 4, "{json}");
    assert_eq!(json["method"], "baseline");
    assert_eq!(json["window_s"], 2.0);
    assert!((json["scale"].as_f64().unwrap() - 0.004).abs() <= 1e-12);
    assert!((json["bias"].as_f64().unwrap() + 0.05).abs() <= 1e-12);
}

#[test]
fn learned_without_checkpoint_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (up, down) = write_pair(dir.path(), 0.004, -0.05, 0.03);
    let out = gyrocal(&["calibrate", "--up", &up, "--down", &down, "--method", "learned"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let (up, down) = write_pair(dir.path(), 0.004, -0.05, 0.03);
    let mut text = fs::read_to_string(&up).unwrap();
    text = text.replacen("\n0.0137931034,", "\n0.0137931034,abc\n0.0137931034,", 1);
    fs::write(&up, text).unwrap();
    let out = gyrocal(&["calibrate", "--up", &up, "--down", &down]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("up.csv:4:"), "{err}");

    let out = gyrocal(&["calibrate", "--up", p(&dir.path().join("missing.csv")), "--down", &down]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(gyrocal(&["calibrate", "--bogus"]).status.code(), Some(1));
    assert_eq!(gyrocal(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(gyrocal(&["simulate", "--set", "corpus.nope=1"]).status.code(), Some(1));
    let help = gyrocal(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for word in ["simulate", "train", "calibrate", "evaluate", "--config", "--set"] {
        assert!(text.contains(word), "help lacks {word}");
    }
    let help = String::from_utf8_lossy(&gyrocal(&["calibrate", "--help"]).stdout).into_owned();
    for flag in ["--up", "--down", "--rate", "--fs", "--window", "--method", "--checkpoint"] {
        assert!(help.contains(flag), "calibrate help lacks {flag}");
    }
}

#[test]
fn unwritable_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let mut args = vec!["simulate", "--out"];
    let target = blocker.join("corpus");
    args.push(p(&target));
    args.extend(SMALL);
    let out = gyrocal(&args);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_train_evaluate_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, train, report) = (dir.path().join("c"), dir.path().join("t"), dir.path().join("r"));
    let run = |mut args: Vec<&str>| {
        args.extend(SMALL);
        let out = gyrocal(&args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(vec!["simulate", "--out", p(&corpus)]);
    run(vec!["train", "--corpus", p(&corpus), "--out", p(&train)]);
    let ckpt = train.join("model.json");
    assert!(ckpt.is_file() && train.join("history.csv").is_file());
    run(vec!["evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--out", p(&report)]);

    let table = fs::read_to_string(report.join("ae_table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    // 2 held-out scenarios x 3 windows x 2 terms
    assert_eq!(rows.len(), 12);
    for w in ["2", "4", "6"] {
        assert_eq!(rows.iter().filter(|r| r.split(',').nth(1) == Some(w)).count(), 4);
    }
    let curve = fs::read_to_string(report.join("ae_curve.csv")).unwrap();
    let rows: Vec<&str> = curve.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    for id in ["s001", "s002"] {
        for term in ["scale", "bias"] {
            let n = rows.iter().filter(|r| r.starts_with(&format!("{id},{term},"))).count();
            assert_eq!(n, 70);
        }
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["scenarios"].as_array().unwrap().len(), 2);
    assert_eq!(json["config_hash"].as_str().unwrap().len(), 16);

    // same inputs, same report bytes
    let before: Vec<Vec<u8>> = ["report.json", "ae_table.csv", "ae_curve.csv"]
        .iter()
        .map(|f| fs::read(report.join(f)).unwrap())
        .collect();
    run(vec!["evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--out", p(&report)]);
    let after: Vec<Vec<u8>> = ["report.json", "ae_table.csv", "ae_curve.csv"]
        .iter()
        .map(|f| fs::read(report.join(f)).unwrap())
        .collect();
    assert_eq!(before, after);

    // learned calibration from the trained checkpoint
    let out = gyrocal(&[
        "calibrate",
        "--up",
        p(&corpus.join("s001_up.csv")),
        "--down",
        p(&corpus.join("s001_down.csv")),
        "--method",
        "learned",
        "--checkpoint",
        p(&ckpt),
        "--window",
        "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["method"], "learned");
    assert!(json["scale"].as_f64().unwrap().is_finite());
}

#[test]
fn evaluate_without_test_split_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, train) = (dir.path().join("c"), dir.path().join("t"));
    let mut args = vec!["simulate", "--out", p(&corpus), "--set", "corpus.n_test=0"];
    args.extend(SMALL);
    assert!(gyrocal(&args).status.success());
    let mut args = vec!["train", "--corpus", p(&corpus), "--out", p(&train), "--set", "corpus.n_test=0"];
    args.extend(SMALL);
    assert!(gyrocal(&args).status.success());
    let out = gyrocal(&[
        "evaluate",
        "--checkpoint",
        p(&train.join("model.json")),
        "--corpus",
        p(&corpus),
        "--out",
        p(&dir.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test"));
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (up, down) = write_pair(dir.path(), 0.004, -0.05, 0.03);
    let missing = dir.path().join("none.json");
    let out = gyrocal(&["calibrate", "--up", &up, "--down", &down, "--method", "learned", "--checkpoint", p(&missing)]);
    assert_eq!(out.status.code(), Some(2));
}
