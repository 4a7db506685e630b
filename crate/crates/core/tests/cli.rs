use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_keyunloc")).args(args).output().expect("binary runs")
}

fn text(o: &Output) -> (String, String) {
    (String::from_utf8_lossy(&o.stdout).into_owned(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Four synthetic users in CMU layout, 2 sessions of 30 repetitions.
fn synth(dir: &Path) -> PathBuf {
    let p = dir.join("synth.csv");
    let o = bin(&["synth", "--users", "4", "--sessions", "2", "--reps", "30", "--seed", "12", "--out", s(&p)]);
    assert!(o.status.success(), "{:?}", text(&o));
    p
}

fn train(dir: &Path, data: &Path, extra: &[&str]) -> (PathBuf, String) {
    let out = dir.join("model");
    let mut args = vec!["train", "--data", s(data), "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = bin(&args);
    let (stdout, stderr) = text(&o);
    assert!(o.status.success(), "{stderr}");
    (out.join("model.json"), stdout)
}

fn accuracy_line(stdout: &str) -> f64 {
    let line = stdout.lines().find(|l| l.starts_with("accuracy")).expect("accuracy line");
    line.split_whitespace()
        .find_map(|w| w.trim_end_matches('%').parse::<f64>().ok())
        .expect("accuracy value")
}

#[test]
fn ingest_summarises_and_caches() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("ing");
    let o = bin(&["ingest", "--data", s(&data), "--out", s(&out)]);
    let (stdout, _) = text(&o);
    assert!(o.status.success());
    assert!(stdout.starts_with("4 users, 60 samples/user, 31 features"), "{stdout}");
    assert!(out.join("dataset.csv").is_file());
}

#[test]
fn missing_input_fails_with_path() {
    let o = bin(&["ingest", "--data", "/no/such/file.csv"]);
    let (_, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr.contains("/no/such/file.csv"), "{stderr}");
}

#[test]
fn generic_without_mapping_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let o = bin(&["ingest", "--data", s(&data), "--format", "generic"]);
    let (_, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr.contains("column mapping"), "{stderr}");
}

#[test]
fn generic_with_mapping_loads_selected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let o = bin(&[
        "ingest", "--data", s(&data), "--format", "generic", "--user-col", "subject", "--session-col", "sessionIndex",
        "--timing-cols", "H.period,DD.period.t,H.t", "--out", s(&dir.path().join("g")),
    ]);
    let (stdout, stderr) = text(&o);
    assert!(o.status.success(), "{stderr}");
    assert!(stdout.starts_with("4 users, 60 samples/user, 3 features"), "{stdout}");
}

#[test]
fn train_reports_estimate_and_feature_mode() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (model, stdout) = train(dir.path(), &data, &[]);
    assert!(model.is_file());
    assert!(stdout.contains("estimated N = "), "{stdout}");
    assert!(stdout.contains("quantile-transformed"));

    let (_, raw) = train(dir.path(), &data, &["--no-quantile"]);
    assert!(raw.contains("raw features"), "{raw}");
    let summary = std::fs::read_to_string(dir.path().join("model/train_summary.txt")).unwrap();
    assert!(summary.starts_with("# config: "));
    assert!(summary.contains("\"use_quantile\":false"));
}

#[test]
fn train_into_unwritable_location_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = bin(&["train", "--data", s(&data), "--out", s(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"pipeline.reducer.colour": 3}"#).unwrap();
    let o = bin(&["train", "--data", s(&data), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2), "{:?}", text(&o));
}

#[test]
fn identify_writes_predictions_and_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (model, _) = train(dir.path(), &data, &["--classifier", "nn"]);
    let out = dir.path().join("pred");
    let o = bin(&["identify", "--data", s(&data), "--model", s(&model), "--out", s(&out)]);
    let (stdout, stderr) = text(&o);
    assert!(o.status.success(), "{stderr}");
    let preds = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    let mut lines = preds.lines();
    assert!(lines.next().unwrap().starts_with("# config: "));
    assert_eq!(lines.next(), Some("id,cluster,user,residual"));
    assert_eq!(lines.count(), 240);
    assert!(accuracy_line(&stdout) >= 90.0, "{stdout}");
}

#[test]
fn resubstitution_is_at_least_held_out_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let text_in = std::fs::read_to_string(&data).unwrap();
    let mut lines = text_in.lines();
    let header = lines.next().unwrap();
    // session 1 trains, session 2 is held out
    let (s1, s2): (Vec<&str>, Vec<&str>) = lines.partition(|l| l.split(',').nth(1) == Some("1"));
    let train_csv = dir.path().join("s1.csv");
    let test_csv = dir.path().join("s2.csv");
    std::fs::write(&train_csv, format!("{header}\n{}\n", s1.join("\n"))).unwrap();
    std::fs::write(&test_csv, format!("{header}\n{}\n", s2.join("\n"))).unwrap();
    let (model, _) = train(dir.path(), &train_csv, &["--classifier", "nn"]);
    let acc = |p: &Path| {
        let o = bin(&["identify", "--data", s(p), "--model", s(&model), "--out", s(&dir.path().join("p"))]);
        assert!(o.status.success());
        accuracy_line(&text(&o).0)
    };
    assert!(acc(&train_csv) >= acc(&test_csv));
}

#[test]
fn identify_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (model, _) = train(dir.path(), &data, &[]);
    let header = std::fs::read_to_string(&data).unwrap().lines().next().unwrap().to_owned();

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, format!("{header}\n")).unwrap();
    let out = dir.path().join("e");
    let o = bin(&["identify", "--data", s(&empty), "--model", s(&model), "--out", s(&out)]);
    assert!(o.status.success(), "{:?}", text(&o));
    let preds = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().nth(1), Some("id,cluster,user,residual"));
    assert_eq!(preds.lines().count(), 2);

    let narrow = dir.path().join("narrow.csv");
    let body: Vec<String> = std::fs::read_to_string(&data)
        .unwrap()
        .lines()
        .take(5)
        .map(|l| l.split(',').take(13).collect::<Vec<_>>().join(","))
        .collect();
    std::fs::write(&narrow, body.join("\n")).unwrap();
    let o = bin(&["identify", "--data", s(&narrow), "--model", s(&model)]);
    let (_, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr.contains("31") && stderr.contains("10"), "{stderr}");

    let broken = dir.path().join("broken.json");
    let full = std::fs::read_to_string(&model).unwrap();
    std::fs::write(&broken, &full[..full.len() / 2]).unwrap();
    let o = bin(&["identify", "--data", s(&data), "--model", s(&broken)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn experiment_writes_three_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("exp");
    let o = bin(&[
        "experiment", "--data", s(&data), "--preset", "table3", "--trials", "1", "--reducer", "pca",
        "--sample-size", "20", "--out", s(&out),
    ]);
    let (stdout, stderr) = text(&o);
    assert!(o.status.success(), "{stderr}");
    for f in ["table3_trials.csv", "table3.json", "table3.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(stdout.contains("users  4"), "{stdout}");
}
