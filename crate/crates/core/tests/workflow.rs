use std::fs;
use std::path::Path;

use serde_json::Value;

use tsnas::config::RunConfig;
use tsnas::reward::RewardMode;
use tsnas::search::{read_episode_log, read_model_log, SearchOptions, SearchPaths};
use tsnas::workflow::{self, REPORT_FILES};
use tsnas::Error;

fn tiny() -> RunConfig {
    RunConfig::from_toml(
        r#"
horizons = [36]
workers = 1

[data.synthetic]
channels = 2
length = 900
periods = [12.0, 24.0]
trend_segments = 2
trend_slope_std = 0.002
noise_std = 0.2
seed = 3
start = "2021-01-01T00:00:00"

[split]
subsets = 4
validation = 2
train_windows = 120
eval_windows = 40

[controller]
units = 12
layers = 1
embed_dim = 6
episodes = 4
steps = 3
seed = 5

[train]
epochs = 2
batch_size = 32
seed = 2

[child]
hidden_scale = 0.05

[evaluate]
top_k = 2
seasonal_period = 24
"#,
    )
    .unwrap()
}

/// Log lines with every wall-clock field removed.
fn stripped(path: &Path) -> Vec<Value> {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(m) => {
                m.remove("wall_clock_ms");
                m.values_mut().for_each(strip);
            }
            Value::Array(a) => a.iter_mut().for_each(strip),
            _ => {}
        }
    }
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            strip(&mut v);
            v
        })
        .collect()
}

#[test]
fn replay_and_resume_give_identical_logs() {
    let cfg = tiny();
    let opts = SearchOptions {
        checkpoint_every: 2,
        ..SearchOptions::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let full = workflow::search(&cfg, a.path(), &opts).unwrap();
    assert_eq!(full.episodes, 4);

    workflow::search(&cfg, b.path(), &opts).unwrap();

    let cut = workflow::search(&cfg, c.path(), &SearchOptions { stop_after: Some(3), ..opts.clone() }).unwrap();
    assert_eq!(cut.reason, "interrupted");
    let resumed = workflow::search(&cfg, c.path(), &opts).unwrap();
    assert_eq!(resumed.episodes, 4);
    assert_eq!(resumed.best, full.best);

    let dir = |p: &Path| SearchPaths::new(workflow::search_dir(p, RewardMode::WvGed));
    for file in [SearchPaths::log, SearchPaths::episodes] {
        let reference = stripped(&file(&dir(a.path())));
        assert_eq!(reference.len(), if file(&dir(a.path())).ends_with("log.jsonl") { 12 } else { 4 });
        assert_eq!(stripped(&file(&dir(b.path()))), reference);
        assert_eq!(stripped(&file(&dir(c.path()))), reference);
    }
}

#[test]
fn both_modes_share_a_run_directory() {
    let run = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    workflow::search(&cfg, run.path(), &SearchOptions::default()).unwrap();
    cfg.reward.mode = RewardMode::Entropy;
    workflow::search(&cfg, run.path(), &SearchOptions::default()).unwrap();

    let wv = read_model_log(&SearchPaths::new(workflow::search_dir(run.path(), RewardMode::WvGed)).log()).unwrap();
    let en = read_model_log(&SearchPaths::new(workflow::search_dir(run.path(), RewardMode::Entropy)).log()).unwrap();
    assert_eq!(wv.len(), en.len());
    assert!(wv.iter().all(|r| r.reward.mode == RewardMode::WvGed && r.reward.ged_term.is_some()));
    assert!(en.iter().all(|r| r.reward.mode == RewardMode::Entropy && r.reward.entropy_term.is_some()));
    // Each search keeps the exact configuration it ran with.
    let saved = RunConfig::load(workflow::search_dir(run.path(), RewardMode::Entropy).join("config.toml")).unwrap();
    assert_eq!(saved, cfg);

    let mut other = tiny();
    other.controller.seed = 99;
    let err = workflow::search(&other, run.path(), &SearchOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn best_accuracy_never_decreases() {
    let run = tempfile::tempdir().unwrap();
    workflow::search(&tiny(), run.path(), &SearchOptions::default()).unwrap();
    let paths = SearchPaths::new(workflow::search_dir(run.path(), RewardMode::WvGed));
    let records = read_model_log(&paths.log()).unwrap();
    for w in records.windows(2) {
        assert!(w[1].best_accuracy >= w[0].best_accuracy);
    }
    let best = records.iter().map(|r| r.reward.accuracy()).fold(0.0, f64::max);
    assert_eq!(records.last().unwrap().best_accuracy, best);
    let episodes = read_episode_log(&paths.episodes()).unwrap();
    assert_eq!(episodes.last().unwrap().best_accuracy, best);
}

#[test]
fn split_writes_one_plan_per_horizon() {
    let run = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.horizons = vec![24, 36];
    let plans = workflow::split(&cfg, run.path()).unwrap();
    assert_eq!(plans.len(), 2);
    for (h, plan) in plans {
        let written: Value = serde_json::from_str(&fs::read_to_string(run.path().join(format!("plan_h{h}.json"))).unwrap()).unwrap();
        assert_eq!(written["subsets"].as_array().unwrap().len(), 4);
        assert_eq!(plan.train_len, 120 - 1 + 2 * h);
        assert_eq!(plan.test().count(), 2);
    }
    assert_eq!(RunConfig::load(run.path().join("config.toml")).unwrap(), cfg);
}

#[test]
fn evaluate_and_report() {
    let run = tempfile::tempdir().unwrap();
    let err = workflow::write_report(run.path()).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
    for needed in ["config.toml", "log.jsonl", "evaluation-"] {
        assert!(err.to_string().contains(needed), "{err}");
    }

    let cfg = tiny();
    workflow::search(&cfg, run.path(), &SearchOptions::default()).unwrap();
    let report = workflow::evaluate(&cfg, run.path(), 2).unwrap();
    let names: Vec<&str> = report.models.iter().map(|m| m.model.as_str()).collect();
    assert_eq!(names, ["nas_wv_ged_best", "nas_wv_ged_ensemble", "seasonal_naive"]);
    assert_eq!(report.genotypes.len(), 2);
    for m in &report.models {
        assert_eq!(m.subsets.len(), 2);
        assert_eq!(m.stepwise[0].values.len(), 36);
        assert!(m.aggregate.rmse.is_finite());
    }

    let out = workflow::write_report(run.path()).unwrap();
    let first: Vec<Vec<u8>> = REPORT_FILES.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
    workflow::write_report(run.path()).unwrap();
    let second: Vec<Vec<u8>> = REPORT_FILES.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
    assert_eq!(first, second);

    let ranking = String::from_utf8(first[1].clone()).unwrap();
    assert_eq!(ranking.lines().count(), 4);
    assert!(ranking.starts_with("model,rmse,mse,mae,medae,minutes,rank_0.1_0.9"));
    let embeddings = String::from_utf8(first[4].clone()).unwrap();
    assert_eq!(embeddings.lines().count(), 1 + 12);
    assert_eq!(embeddings.lines().next().unwrap().split(',').count(), 4 + 6);
}

#[test]
fn rank_file_reads_metric_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    fs::write(&path, "model,rmse,mse,mae,medae,minutes\na,1,1,1,1,5\nb,2,4,2,2,1\nc,0.5,0.25,0.5,0.5,9\n").unwrap();
    let t = workflow::rank_file(&path, tsnas::evaluation::Normalization::MinMax).unwrap();
    assert_eq!(t.rows.len(), 3);
    fs::write(&path, "model,rmse,mse,mae,medae,minutes\na,x,1,1,1,5\n").unwrap();
    assert!(matches!(workflow::rank_file(&path, tsnas::evaluation::Normalization::MinMax), Err(Error::Data(_))));
}
