use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tsnas(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsnas"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn sample_and_ged() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&tsnas(&["sample", "--seed", "4", "--count", "2"], dir.path()));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(out, stdout(&tsnas(&["sample", "--seed", "4", "--count", "2"], dir.path())));

    fs::write(dir.path().join("a.json"), lines[0]).unwrap();
    fs::write(dir.path().join("b.json"), lines[1]).unwrap();
    let same: serde_json::Value = serde_json::from_str(&stdout(&tsnas(&["ged", "a.json", "a.json"], dir.path()))).unwrap();
    assert_eq!(same["total"], 0.0);
    let diff: serde_json::Value = serde_json::from_str(&stdout(&tsnas(&["ged", "a.json", "b.json"], dir.path()))).unwrap();
    let d = diff["total"].as_f64().unwrap();
    assert!(d > 0.0 && d <= 1.0);
}

#[test]
fn rank_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("m.csv"),
        "model,rmse,mse,mae,medae,minutes\nfast,2,4,2,2,1\nslow,1,1,1,1,50\nmid,1.5,2.25,1.5,1.5,10\n",
    )
    .unwrap();
    let out = stdout(&tsnas(&["rank", "--input", "m.csv", "--normalization", "min_max"], dir.path()));
    let mut lines = out.lines();
    assert!(lines.next().unwrap().starts_with("model,"));
    assert_eq!(lines.count(), 3);

    let o = tsnas(&["rank", "--input", "m.csv", "--normalization", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "horizons = [24]\nnot_a_key = 1\n").unwrap();
    let o = tsnas(&["-c", "bad.toml", "split"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not_a_key"));

    fs::write(dir.path().join("data.csv"), "date,a\n2020-01-01 00:00:00,1.0\n2020-01-01 01:00:00,oops\n").unwrap();
    fs::write(dir.path().join("data.toml"), "[data]\npath = \"data.csv\"\n").unwrap();
    let o = tsnas(&["-c", "data.toml", "split"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let o = tsnas(&["--run-dir", "empty", "report"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn smoke_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let config = config.to_str().unwrap();
    let run = ["-c", config, "--run-dir", "run"];
    let step = |extra: &[&str]| stdout(&tsnas(&[&run[..], extra].concat(), dir.path()));

    step(&["split"]);
    assert!(dir.path().join("run/plan_h36.json").exists());
    step(&["search"]);
    step(&["search", "--mode", "entropy"]);
    let eval = step(&["evaluate"]);
    assert!(eval.contains("nas_wv_ged_best") && eval.contains("seasonal_naive"));
    step(&["evaluate", "--mode", "entropy"]);
    step(&["report"]);
    for f in ["subset_metrics.csv", "ranking.csv", "stepwise_correlation.csv", "episode_curves.csv", "embeddings.csv"] {
        let body = fs::read_to_string(dir.path().join("run/report").join(f)).unwrap();
        assert!(body.lines().count() > 1, "{f} is empty");
    }
    let ranking = fs::read_to_string(dir.path().join("run/report/ranking.csv")).unwrap();
    assert!(ranking.contains("nas_entropy_best") && ranking.contains("nas_wv_ged_best"));

    // A finished search resumes into a no-op with the same outcome.
    let again = step(&["search"]);
    assert!(again.contains("\"episodes\": 3"), "{again}");
}
