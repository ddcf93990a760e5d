//! End-to-end steps behind the command-line tool. Every step reads and
//! writes a run directory:
//!
//! ```text
//! run/
//!   config.toml                 exact configuration used
//!   plan_h{H}.json              walk-forward plan per horizon
//!   search-{mode}/              log.jsonl, episodes.jsonl, checkpoint.bin, best.json
//!   evaluation-{mode}.json      test-subset metrics of the selected models
//!   report/                     CSV tables (see `write_report`)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{load_panel, walk_forward_split, Panel, WalkForwardPlan};
use crate::error::{data_err, usage_err, Error, Result};
use crate::evaluation::{ensemble_mean, mean_correlation, metrics, rank_models, seasonal_naive, stepwise_correlation, Metrics, ModelScore, Normalization, RankingTable};
use crate::macro_net::{build_network, train_child, BuildOptions, Dims, TrainConfig};
use crate::reward::RewardMode;
use crate::search::{mix_seed, read_episode_log, read_model_log, run_search, validation_data, ModelRecord, SearchEnvironment, SearchOptions, SearchOutcome, SearchPaths};
use crate::search_space::{Genotype, StateEmbedding, SLOT_COUNT};
use crate::tensor::Tensor;

pub fn load_data(cfg: &RunConfig) -> Result<Panel> {
    match (&cfg.data.path, &cfg.data.synthetic) {
        (Some(p), _) => {
            let (panel, gaps) = load_panel(p)?;
            for g in &gaps {
                warn!(
                    "interpolated {} missing hour(s) from {} in {}",
                    g.hours,
                    g.start,
                    g.channel.as_deref().unwrap_or("all channels")
                );
            }
            Ok(panel)
        }
        (None, Some(s)) => s.generate(),
        (None, None) => Err(crate::error::config_err!("no data source configured")),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

/// Record the configuration in the run directory, refusing to overwrite a
/// different one. The reward mode may differ between runs in one directory;
/// each search also keeps its own copy.
pub fn prepare_run_dir(cfg: &RunConfig, run: &Path) -> Result<()> {
    fs::create_dir_all(run).map_err(|e| Error::io(run, e))?;
    let path = run.join("config.toml");
    if !path.exists() {
        return cfg.save(&path);
    }
    let existing = RunConfig::load(&path)?;
    let mut cmp = cfg.clone();
    cmp.reward.mode = existing.reward.mode;
    if cmp != existing {
        return Err(crate::error::config_err!("{} holds a different configuration", path.display()));
    }
    Ok(())
}

pub fn plans(cfg: &RunConfig, panel: &Panel) -> Result<Vec<(usize, WalkForwardPlan)>> {
    cfg.horizons
        .iter()
        .map(|&h| {
            let (train_len, eval_len) = cfg.range_lengths(h);
            Ok((h, walk_forward_split(panel, cfg.split.subsets, train_len, eval_len, cfg.split.validation)?))
        })
        .collect()
}

/// Materialize the walk-forward plans.
pub fn split(cfg: &RunConfig, run: &Path) -> Result<Vec<(usize, WalkForwardPlan)>> {
    prepare_run_dir(cfg, run)?;
    let panel = load_data(cfg)?;
    let plans = plans(cfg, &panel)?;
    for (h, p) in &plans {
        write_json(&run.join(format!("plan_h{h}.json")), p)?;
    }
    Ok(plans)
}

pub fn search_dir(run: &Path, mode: RewardMode) -> PathBuf {
    run.join(format!("search-{mode}"))
}

pub fn search(cfg: &RunConfig, run: &Path, opts: &SearchOptions) -> Result<SearchOutcome> {
    prepare_run_dir(cfg, run)?;
    let panel = load_data(cfg)?;
    let data = validation_data(&panel, cfg)?;
    let mut env = SearchEnvironment::new(cfg, &data)?;
    let paths = SearchPaths::new(search_dir(run, cfg.reward.mode));
    fs::create_dir_all(&paths.dir).map_err(|e| Error::io(&paths.dir, e))?;
    cfg.save(paths.dir.join("config.toml"))?;
    info!("search ({}) in {}", cfg.reward.mode, paths.dir.display());
    run_search(cfg, &mut env, &paths, opts)
}

/// The `k` best distinct, non-failed genotypes by validation accuracy.
pub fn select_top(records: &[ModelRecord], k: usize) -> Vec<Genotype> {
    let mut ok: Vec<&ModelRecord> = records.iter().filter(|r| !r.failed()).collect();
    ok.sort_by(|a, b| {
        b.reward
            .accuracy()
            .total_cmp(&a.reward.accuracy())
            .then_with(|| (a.episode, a.step).cmp(&(b.episode, b.step)))
    });
    let mut out: Vec<Genotype> = Vec::new();
    for r in ok {
        if out.len() == k {
            break;
        }
        if !out.contains(&r.genotype) {
            out.push(r.genotype.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub horizon: usize,
    pub subset: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonCorrelation {
    pub horizon: usize,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub model: String,
    pub subsets: Vec<SubsetMetrics>,
    /// Over every test element of every subset and horizon.
    pub aggregate: Metrics,
    /// Train plus test wall-clock minutes.
    pub minutes: f64,
    pub stepwise: Vec<HorizonCorrelation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: Option<RewardMode>,
    pub genotypes: Vec<Genotype>,
    pub models: Vec<MetricRecord>,
}

impl EvaluationReport {
    pub fn model(&self, name: &str) -> Option<&MetricRecord> {
        self.models.iter().find(|m| m.model == name)
    }
}

/// Forecasts of one model on every (horizon, subset), with timing.
struct Forecasts {
    /// Keyed by (horizon, subset).
    preds: BTreeMap<(usize, usize), Tensor>,
    seconds: f64,
}

fn record(model: &str, f: &Forecasts, truth: &BTreeMap<(usize, usize), Tensor>) -> Result<MetricRecord> {
    let mut subsets = Vec::new();
    let mut all_p = Vec::new();
    let mut all_t = Vec::new();
    let mut by_h: BTreeMap<usize, Vec<Vec<Option<f64>>>> = BTreeMap::new();
    for ((h, k), p) in &f.preds {
        let t = &truth[&(*h, *k)];
        subsets.push(SubsetMetrics {
            horizon: *h,
            subset: *k,
            metrics: metrics(p.data(), t.data())?,
        });
        all_p.extend_from_slice(p.data());
        all_t.extend_from_slice(t.data());
        by_h.entry(*h).or_default().push(stepwise_correlation(p, t)?);
    }
    Ok(MetricRecord {
        model: model.to_string(),
        subsets,
        aggregate: metrics(&all_p, &all_t)?,
        minutes: f.seconds / 60.0,
        stepwise: by_h
            .into_iter()
            .map(|(horizon, v)| HorizonCorrelation {
                horizon,
                values: mean_correlation(&v),
            })
            .collect(),
    })
}

/// Train each genotype on every test subset's train range and score it on
/// the subset's evaluation range; adds the ensemble mean of all genotypes
/// and the seasonal-naive reference. `label` prefixes the model names.
pub fn evaluate_genotypes(cfg: &RunConfig, panel: &Panel, genotypes: &[Genotype], label: &str) -> Result<EvaluationReport> {
    if genotypes.is_empty() {
        return Err(usage_err!("no genotypes to evaluate"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(|e| Error::Runtime(e.to_string()))?;
    let mut truth = BTreeMap::new();
    let mut naive = Forecasts {
        preds: BTreeMap::new(),
        seconds: 0.0,
    };
    let mut jobs = Vec::new();
    let mut windows = BTreeMap::new();
    for (h, plan) in plans(cfg, panel)? {
        if cfg.evaluate.seasonal_period > h {
            return Err(crate::error::config_err!("seasonal period {} exceeds horizon {h}", cfg.evaluate.seasonal_period));
        }
        for s in plan.test() {
            let sd = plan.standardize(panel, s.index)?;
            let train = sd.train.windows(h)?;
            let eval = sd.eval.windows(h)?;
            let t0 = Instant::now();
            naive.preds.insert((h, s.index), seasonal_naive(&eval.inputs, h, cfg.evaluate.seasonal_period)?);
            naive.seconds += t0.elapsed().as_secs_f64();
            truth.insert((h, s.index), eval.targets.clone());
            for m in 0..genotypes.len() {
                jobs.push((m, h, s.index));
            }
            windows.insert((h, s.index), (train, eval));
        }
    }
    if truth.is_empty() {
        return Err(data_err!("the plan has no test subsets"));
    }
    let train_cfg = TrainConfig {
        max_train_windows: cfg.evaluate.max_train_windows,
        ..cfg.train.clone()
    };
    let results: Vec<(usize, usize, usize, Tensor, f64)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, h, k)| {
                let (train, eval) = &windows[&(h, k)];
                let t0 = Instant::now();
                let seed = mix_seed(&[train_cfg.seed, 0xE7A1, m as u64, h as u64, k as u64]);
                let mut net = build_network(&genotypes[m], Dims::square(h, train.channels()), BuildOptions {
                    hidden_scale: cfg.child.hidden_scale,
                    seed,
                })?;
                let out = train_child(&mut net, train, &[], &TrainConfig { seed, ..train_cfg.clone() })?;
                if let Some(f) = out.failure {
                    return Err(Error::Runtime(format!("model {m} failed on subset {k}, horizon {h}: {f}")));
                }
                let p = net.predict(&eval.inputs)?;
                Ok((m, h, k, p, t0.elapsed().as_secs_f64()))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut per_model: Vec<Forecasts> = (0..genotypes.len())
        .map(|_| Forecasts {
            preds: BTreeMap::new(),
            seconds: 0.0,
        })
        .collect();
    for (m, h, k, p, secs) in results {
        per_model[m].preds.insert((h, k), p);
        per_model[m].seconds += secs;
    }
    let mut ensemble = Forecasts {
        preds: BTreeMap::new(),
        seconds: per_model.iter().map(|f| f.seconds).sum(),
    };
    for key in truth.keys() {
        let members: Vec<Tensor> = per_model.iter().map(|f| f.preds[key].clone()).collect();
        ensemble.preds.insert(*key, ensemble_mean(&members)?);
    }
    let mut models = vec![record(&format!("{label}_best"), &per_model[0], &truth)?];
    if genotypes.len() > 1 {
        models.push(record(&format!("{label}_ensemble"), &ensemble, &truth)?);
    }
    models.push(record("seasonal_naive", &naive, &truth)?);
    Ok(EvaluationReport {
        mode: None,
        genotypes: genotypes.to_vec(),
        models,
    })
}

pub fn evaluation_path(run: &Path, mode: RewardMode) -> PathBuf {
    run.join(format!("evaluation-{mode}.json"))
}

/// Evaluate the `top_k` best models of a finished search on the test subsets.
pub fn evaluate(cfg: &RunConfig, run: &Path, top_k: usize) -> Result<EvaluationReport> {
    let mode = cfg.reward.mode;
    let paths = SearchPaths::new(search_dir(run, mode));
    if !paths.log().exists() {
        return Err(usage_err!("no search log at {}; run `search` first", paths.log().display()));
    }
    let records = read_model_log(&paths.log())?;
    let top = select_top(&records, top_k);
    if top.is_empty() {
        return Err(Error::Runtime("the search log has no successfully trained model".into()));
    }
    let panel = load_data(cfg)?;
    let mut report = evaluate_genotypes(cfg, &panel, &top, &format!("nas_{mode}"))?;
    report.mode = Some(mode);
    write_json(&evaluation_path(run, mode), &report)?;
    Ok(report)
}

/// Parse `model,rmse,mse,mae,medae,minutes` rows.
pub fn read_model_scores(path: &Path) -> Result<Vec<ModelScore>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 6 {
            return Err(data_err!("{} line {}: expected 6 fields", path.display(), i + 2));
        }
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse()
                .map_err(|_| data_err!("{} line {}: `{}` is not numeric", path.display(), i + 2, &rec[j]))
        };
        out.push(ModelScore {
            model: rec[0].to_string(),
            metrics: Metrics {
                rmse: num(1)?,
                mse: num(2)?,
                mae: num(3)?,
                medae: num(4)?,
            },
            minutes: num(5)?,
        });
    }
    Ok(out)
}

pub fn rank_file(input: &Path, norm: Normalization) -> Result<RankingTable> {
    rank_models(&read_model_scores(input)?, norm)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Report files written by [`write_report`].
pub const REPORT_FILES: [&str; 5] = [
    "subset_metrics.csv",
    "ranking.csv",
    "stepwise_correlation.csv",
    "episode_curves.csv",
    "embeddings.csv",
];

/// Emit the report tables from the logs in `run`. Output is a pure function
/// of the inputs.
pub fn write_report(run: &Path) -> Result<PathBuf> {
    let cfg_path = run.join("config.toml");
    let mut missing = Vec::new();
    if !cfg_path.exists() {
        missing.push(cfg_path.display().to_string());
    }
    let modes = [RewardMode::WvGed, RewardMode::Entropy];
    let searches: Vec<RewardMode> = modes.into_iter().filter(|m| SearchPaths::new(search_dir(run, *m)).log().exists()).collect();
    let evals: Vec<RewardMode> = modes.into_iter().filter(|m| evaluation_path(run, *m).exists()).collect();
    if searches.is_empty() {
        missing.push(format!("{}/search-*/log.jsonl", run.display()));
    }
    if evals.is_empty() {
        missing.push(format!("{}/evaluation-*.json", run.display()));
    }
    if !missing.is_empty() {
        return Err(usage_err!("missing report inputs: {}", missing.join(", ")));
    }
    let cfg = RunConfig::load(&cfg_path)?;
    let out = run.join("report");
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let mut records: Vec<MetricRecord> = Vec::new();
    for m in &evals {
        let r: EvaluationReport = read_json(&evaluation_path(run, *m))?;
        for rec in r.models {
            if !records.iter().any(|x| x.model == rec.model) {
                records.push(rec);
            }
        }
    }

    let mut w = csv_writer(&out.join(REPORT_FILES[0]))?;
    w.write_record(["model", "horizon", "subset", "rmse", "mse", "mae", "medae"])?;
    for r in &records {
        for s in &r.subsets {
            w.write_record([
                r.model.clone(),
                s.horizon.to_string(),
                (s.subset + 1).to_string(),
                s.metrics.rmse.to_string(),
                s.metrics.mse.to_string(),
                s.metrics.mae.to_string(),
                s.metrics.medae.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(out.join(REPORT_FILES[0]), e))?;

    let scores: Vec<ModelScore> = records
        .iter()
        .map(|r| ModelScore {
            model: r.model.clone(),
            metrics: r.aggregate,
            minutes: r.minutes,
        })
        .collect();
    let ranking_path = out.join(REPORT_FILES[1]);
    match rank_models(&scores, cfg.evaluate.normalization) {
        Ok(t) => t.write_csv(fs::File::create(&ranking_path).map_err(|e| Error::io(&ranking_path, e))?)?,
        Err(e) => {
            warn!("ranking skipped: {e}");
            let mut w = csv_writer(&ranking_path)?;
            w.write_record(["model", "rmse", "mse", "mae", "medae", "minutes"])?;
            w.flush().map_err(|e| Error::io(&ranking_path, e))?;
        }
    }

    let mut w = csv_writer(&out.join(REPORT_FILES[2]))?;
    w.write_record(["model", "horizon", "step", "correlation"])?;
    for r in &records {
        for hc in &r.stepwise {
            for (s, v) in hc.values.iter().enumerate() {
                w.write_record([r.model.clone(), hc.horizon.to_string(), (s + 1).to_string(), opt(*v)])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(out.join(REPORT_FILES[2]), e))?;

    let mut w = csv_writer(&out.join(REPORT_FILES[3]))?;
    w.write_record([
        "mode",
        "episode",
        "mean_reward",
        "max_reward",
        "best_accuracy",
        "mean_pairwise_ged",
        "mean_entropy",
        "mean_chosen_prob",
    ])?;
    for m in &searches {
        for e in read_episode_log(&SearchPaths::new(search_dir(run, *m)).episodes())? {
            w.write_record([
                m.to_string(),
                (e.episode + 1).to_string(),
                e.mean_reward.to_string(),
                e.max_reward.to_string(),
                e.best_accuracy.to_string(),
                e.mean_pairwise_ged.to_string(),
                e.mean_entropy.to_string(),
                e.mean_chosen_prob.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(out.join(REPORT_FILES[3]), e))?;

    // slot-averaged state embedding of every sampled model
    let emb = StateEmbedding::new(cfg.controller.embed_dim, &mut ChaCha8Rng::seed_from_u64(cfg.controller.seed));
    let mut w = csv_writer(&out.join(REPORT_FILES[4]))?;
    let mut header = vec!["mode".to_string(), "episode".into(), "step".into(), "reward".into()];
    header.extend((0..emb.dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for m in &searches {
        for r in read_model_log(&SearchPaths::new(search_dir(run, *m)).log())? {
            let t = emb.encode(&r.genotype)?;
            let mut row = vec![m.to_string(), (r.episode + 1).to_string(), (r.step + 1).to_string(), r.reward.total.to_string()];
            for d in 0..emb.dim {
                let mean = (0..SLOT_COUNT).map(|s| t.data()[s * emb.dim + d]).sum::<f64>() / SLOT_COUNT as f64;
                row.push(mean.to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(out.join(REPORT_FILES[4]), e))?;
    Ok(out)
}
