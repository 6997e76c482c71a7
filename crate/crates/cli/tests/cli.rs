use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const MICRO: &str = "\
[model]
d_model = 8
heads = 1
window = 6
encoder_layers = 1
decoder_layers = 1

[train]
epochs = 2
batch_size = 7
";

fn daf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_daf")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Temp dir holding a 60-row synthetic series and the micro config.
struct Fixture {
    dir: TempDir,
    data: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("series.csv");
    let out = daf(&["synth", "--kind", "sine", "--rows", "60", "--noise", "0.01", "--seed", "4", "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let config = dir.path().join("micro.toml");
    fs::write(&config, MICRO).unwrap();
    Fixture { dir, data, config }
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let out = self.path(out);
        let mut args = vec!["train", "--config", s(&self.config), "--data", s(&self.data), "--out", s(&out)];
        args.extend_from_slice(extra);
        daf(&args)
    }
}

fn read(p: PathBuf) -> String {
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn synth_writes_three_columns() {
    let f = fixture();
    let text = read(f.data.clone());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("target,aux_mix,aux_lag"));
    assert_eq!(lines.count(), 60);
}

#[test]
fn synth_rejects_unknown_kind() {
    let out = daf(&["synth", "--kind", "square"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).starts_with("error[config]:"), "{}", stderr(&out));
}

#[test]
fn train_writes_every_artifact() {
    let f = fixture();
    let out = f.train("run", &["--train-rows", "45", "--test-rows", "15"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["config.toml", "checkpoint.json", "loss_history.csv", "predictions.csv", "metrics.json"] {
        assert!(f.path("run").join(name).is_file(), "missing {name}");
    }
    let history = read(f.path("run/loss_history.csv"));
    assert_eq!(history.lines().count(), 3);

    let predictions = read(f.path("run/predictions.csv"));
    let rows: Vec<&str> = predictions.lines().collect();
    assert_eq!(rows[0], "index,target,truth,prediction");
    // Padded test split of 15 rows: estimates for test rows 1..15.
    assert_eq!(rows.len(), 1 + 14);
    assert!(rows[1].starts_with("46,target,"), "{}", rows[1]);

    let metrics: serde_json::Value = serde_json::from_str(&read(f.path("run/metrics.json"))).unwrap();
    assert_eq!(metrics["split"], "test");
    assert_eq!(metrics["count"], 14);
    let t = &metrics["targets"][0];
    for key in ["model", "persistence"] {
        for units in ["normalized", "original"] {
            assert!(t[key][units]["mae"].as_f64().unwrap() >= 0.0);
            assert!(t[key][units]["rmse"].as_f64().unwrap() >= t[key][units]["mae"].as_f64().unwrap());
        }
    }
}

#[test]
fn identical_seeds_reproduce_bitwise_and_seeds_matter() {
    let f = fixture();
    for (dir, seed) in [("a", "3"), ("b", "3"), ("c", "4")] {
        let out = f.train(dir, &["--seed", seed]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let (a, b, c) =
        (read(f.path("a/checkpoint.json")), read(f.path("b/checkpoint.json")), read(f.path("c/checkpoint.json")));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(read(f.path("a/loss_history.csv")), read(f.path("b/loss_history.csv")));
}

#[test]
fn config_echo_reruns_identically() {
    let f = fixture();
    let out = f.train("first", &["--seed", "9", "--targets", "target,aux_lag", "--ablate-residual-layer"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let echo = f.path("first/config.toml");
    let second = f.path("second");
    let out = daf(&["train", "--config", s(&echo), "--out", s(&second)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read(f.path("first/loss_history.csv")), read(f.path("second/loss_history.csv")));
    assert_eq!(read(f.path("first/predictions.csv")), read(f.path("second/predictions.csv")));
    let echoed = read(echo);
    assert!(echoed.contains("ablate_residual_layer = true"), "{echoed}");
    assert!(echoed.contains("targets = [\"target\", \"aux_lag\"]"), "{echoed}");
}

#[test]
fn resumed_training_matches_straight_run() {
    let f = fixture();
    assert_eq!(code(&f.train("straight", &["--epochs", "4"])), 0);
    assert_eq!(code(&f.train("split", &["--epochs", "2"])), 0);
    let ck = f.path("split/checkpoint.json");
    let out = f.train("split", &["--epochs", "4", "--resume", s(&ck)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read(f.path("straight/checkpoint.json")), read(ck));
    assert_eq!(read(f.path("straight/loss_history.csv")), read(f.path("split/loss_history.csv")));
}

#[test]
fn resume_rejects_a_different_model() {
    let f = fixture();
    assert_eq!(code(&f.train("run", &[])), 0);
    let ck = f.path("run/checkpoint.json");
    let out = f.train("run", &["--epochs", "3", "--window", "7", "--resume", s(&ck)]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn eval_and_predict_read_the_checkpoint() {
    let f = fixture();
    assert_eq!(code(&f.train("run", &[])), 0);
    let ck = f.path("run/checkpoint.json");
    let eval_dir = f.path("eval");
    let out = daf(&["eval", "--data", s(&f.data), "--checkpoint", s(&ck), "--split", "train", "--out", s(&eval_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics: serde_json::Value = serde_json::from_str(&read(eval_dir.join("metrics.json"))).unwrap();
    assert_eq!(metrics["split"], "train");
    assert_eq!(metrics["count"], 44);

    let pred_dir = f.path("pred");
    let out = daf(&["predict", "--data", s(&f.data), "--checkpoint", s(&ck), "--split", "all", "--out", s(&pred_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read(pred_dir.join("predictions.csv")).lines().count(), 1 + 59);
    assert!(!pred_dir.join("metrics.json").exists());

    // The checkpoint's own directory is the default output and checkpoint location.
    let out = daf(&["eval", "--data", s(&f.data), "--out", s(&f.path("run"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn missing_data_is_an_input_error_without_outputs() {
    let f = fixture();
    let out = daf(&["train", "--config", s(&f.config), "--data", s(&f.path("absent.csv")), "--out", s(&f.path("run"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).starts_with("error[input]:"), "{}", stderr(&out));
    assert!(!f.path("run").exists());
}

#[test]
fn malformed_cells_report_their_row() {
    let f = fixture();
    let bad = f.path("bad.csv");
    let mut lines: Vec<String> = read(f.data.clone()).lines().map(String::from).collect();
    lines[5] = "0.1,oops,0.2".into();
    fs::write(&bad, lines.join("\n")).unwrap();
    let out = daf(&["train", "--config", s(&f.config), "--data", s(&bad), "--out", s(&f.path("run"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("row 5"), "{}", stderr(&out));
    assert!(!f.path("run").exists());
}

#[test]
fn invalid_configuration_exits_with_config_code() {
    let f = fixture();
    let typo = f.path("typo.toml");
    fs::write(&typo, "[model]\nd_modle = 8\n").unwrap();
    for args in [
        vec!["train", "--config", s(&typo), "--data", s(&f.data)],
        vec!["train", "--config", s(&f.config), "--data", s(&f.data), "--window", "3"],
        vec!["train", "--config", s(&f.config), "--data", s(&f.data), "--targets", "nope"],
    ] {
        let mut args = args.clone();
        let run = f.path("run");
        args.extend(["--out", s(&run)]);
        let out = daf(&args);
        assert_eq!(code(&out), 4, "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("error[config]:"), "{}", stderr(&out));
        assert!(!run.exists());
    }
}

#[test]
fn gradcheck_passes_and_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = daf(&["gradcheck", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("junction.residual"), "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
    let csv = read(dir.path().join("gradcheck.csv"));
    assert!(csv.starts_with("parameter,group,max_rel_error\n"));
}

#[test]
fn corrupted_backward_fails_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = daf(&["gradcheck", "--out", s(dir.path()), "--corrupt-backward", "softmax_rows"]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.starts_with("error[numeric]: gradient check failed"), "{err}");
    assert!(err.contains("attention"), "{err}");

    let out = daf(&["gradcheck", "--out", s(dir.path()), "--corrupt-backward", "nonsense"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}
