//! The search loop: child evaluation environment, JSON-lines logs,
//! periodic controller checkpoints and resumption.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::controller::{Controller, ControllerState, Environment, Trajectory};
use crate::data::{walk_forward_split, Panel, WindowSet};
use crate::error::{Error, Result};
use crate::ged::ged;
use crate::macro_net::{build_network, train_child, BuildOptions, Dims, TrainConfig};
use crate::reward::{compose_reward, entropy_term, ged_diversity_term, inverse_of, HorizonScores, RewardBreakdown, RewardMode, RewardParts};
use crate::search_space::Genotype;

/// Windows of the two validation subsets for one horizon. The child trains
/// on the first subset's train range.
#[derive(Debug, Clone)]
pub struct HorizonData {
    pub horizon: usize,
    pub channels: usize,
    pub train: WindowSet,
    pub vals: Vec<WindowSet>,
}

/// Standardized validation windows for every configured horizon.
pub fn validation_data(panel: &Panel, cfg: &RunConfig) -> Result<Vec<HorizonData>> {
    cfg.horizons
        .iter()
        .map(|&h| {
            let (train_len, eval_len) = cfg.range_lengths(h);
            let plan = walk_forward_split(panel, cfg.split.subsets, train_len, eval_len, cfg.split.validation)?;
            let first = plan.standardize(panel, 0)?;
            let second = plan.standardize(panel, 1)?;
            Ok(HorizonData {
                horizon: h,
                channels: panel.num_channels(),
                train: first.train.windows(h)?,
                vals: vec![first.eval.windows(h)?, second.eval.windows(h)?],
            })
        })
        .collect()
}

/// Mix seed components into one 64-bit seed (splitmix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x9E37_79B9_7F4A_7C15;
    for p in parts {
        z = z.wrapping_add(*p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildResult {
    pub horizon: usize,
    /// RMSE per validation subset; empty when the child failed.
    pub val_rmse: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub epochs: usize,
    pub wall_clock_ms: u64,
}

/// Build and train one genotype for one horizon. Structural mismatches and
/// diverged training are reported as failures, not errors.
pub fn evaluate_child(genotype: &Genotype, data: &HorizonData, train: &TrainConfig, hidden_scale: f64, seed: u64) -> Result<ChildResult> {
    let start = Instant::now();
    let dims = Dims::square(data.horizon, data.channels);
    let fail = |reason: String, epochs: usize| ChildResult {
        horizon: data.horizon,
        val_rmse: Vec::new(),
        failure: Some(reason),
        epochs,
        wall_clock_ms: start.elapsed().as_millis() as u64,
    };
    let mut net = match build_network(genotype, dims, BuildOptions { hidden_scale, seed }) {
        Ok(n) => n,
        Err(Error::Config(m)) => return Ok(fail(m, 0)),
        Err(e) => return Err(e),
    };
    let cfg = TrainConfig { seed, ..train.clone() };
    let vals: Vec<&WindowSet> = data.vals.iter().collect();
    let out = train_child(&mut net, &data.train, &vals, &cfg)?;
    if let Some(reason) = out.failure {
        return Ok(fail(reason, out.epochs_run));
    }
    Ok(ChildResult {
        horizon: data.horizon,
        val_rmse: out.val_rmse,
        failure: None,
        epochs: out.epochs_run,
        wall_clock_ms: start.elapsed().as_millis() as u64,
    })
}

/// One search-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub episode: usize,
    pub step: usize,
    pub genotype: Genotype,
    pub reward: RewardBreakdown,
    pub children: Vec<ChildResult>,
    /// Mean chosen-component probability over the sampled heads.
    pub mean_head_prob: f64,
    /// Mean GED to the models sampled earlier in the episode.
    pub ged_to_history: Option<f64>,
    /// Accuracy term of the best model so far, this one included.
    pub best_accuracy: f64,
    /// Train and validation time of this model over all horizons.
    pub wall_clock_ms: u64,
}

impl ModelRecord {
    pub fn failed(&self) -> bool {
        self.children.iter().any(|c| c.failure.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub exploited: bool,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub mean_chosen_prob: f64,
    pub mean_entropy: f64,
    pub mean_pairwise_ged: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub update_skipped: bool,
    pub best_accuracy: f64,
}

/// Mean GED over all unordered pairs.
pub fn mean_pairwise_ged(models: &[&Genotype]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            sum += ged(models[i], models[j]);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Trains every sampled model on the validation subsets and composes rewards.
pub struct SearchEnvironment<'a> {
    pub data: &'a [HorizonData],
    pub mode: RewardMode,
    pub ged_scale: f64,
    pub entropy_scale: f64,
    pub train: TrainConfig,
    pub hidden_scale: f64,
    pool: rayon::ThreadPool,
    /// Records of the most recent batch, without the best-so-far field.
    pub last: Vec<ModelRecord>,
}

impl<'a> SearchEnvironment<'a> {
    pub fn new(cfg: &RunConfig, data: &'a [HorizonData]) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.worker_count())
            .build()
            .map_err(|e| Error::Runtime(e.to_string()))?;
        Ok(SearchEnvironment {
            data,
            mode: cfg.reward.mode,
            ged_scale: cfg.reward.ged_scale,
            entropy_scale: cfg.reward.entropy_scale,
            train: cfg.train.clone(),
            hidden_scale: cfg.child.hidden_scale,
            pool,
            last: Vec::new(),
        })
    }
}

impl Environment for SearchEnvironment<'_> {
    fn evaluate(&mut self, episode: usize, states: &[ControllerState], genotypes: &[Genotype]) -> Result<Vec<f64>> {
        let jobs: Vec<(usize, usize)> = (0..genotypes.len()).flat_map(|m| (0..self.data.len()).map(move |h| (m, h))).collect();
        let (data, train, scale, base) = (self.data, &self.train, self.hidden_scale, self.train.seed);
        let results: Vec<ChildResult> = self.pool.install(|| {
            jobs.par_iter()
                .map(|&(m, h)| {
                    let seed = mix_seed(&[base, episode as u64, m as u64, data[h].horizon as u64]);
                    evaluate_child(&genotypes[m], &data[h], train, scale, seed)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut results = results.into_iter();
        self.last.clear();
        let mut rewards = Vec::with_capacity(genotypes.len());
        for (m, (g, st)) in genotypes.iter().zip(states).enumerate() {
            let children: Vec<ChildResult> = results.by_ref().take(self.data.len()).collect();
            let horizons = children
                .iter()
                .map(|c| HorizonScores {
                    horizon: c.horizon,
                    e_inv: if c.failure.is_some() {
                        vec![0.0; 2]
                    } else {
                        c.val_rmse.iter().map(|r| inverse_of(*r)).collect()
                    },
                })
                .collect();
            let history = &genotypes[..m];
            let ged_to_history = (!history.is_empty()).then(|| ged_diversity_term(history, g, 1.0));
            let parts = match self.mode {
                RewardMode::WvGed => RewardParts {
                    horizons,
                    ged_term: Some(ged_diversity_term(history, g, self.ged_scale)),
                    entropy_term: None,
                },
                RewardMode::Entropy => RewardParts {
                    horizons,
                    ged_term: None,
                    entropy_term: Some(entropy_term(&st.head_probs(), self.entropy_scale)),
                },
            };
            let reward = compose_reward(self.mode, parts)?;
            rewards.push(reward.total);
            let n = st.heads.len().max(1) as f64;
            self.last.push(ModelRecord {
                episode,
                step: m,
                genotype: g.clone(),
                wall_clock_ms: children.iter().map(|c| c.wall_clock_ms).sum(),
                children,
                mean_head_prob: st.chosen_probs().sum::<f64>() / n,
                ged_to_history,
                best_accuracy: 0.0,
                reward,
            });
        }
        Ok(rewards)
    }
}

/// Everything needed to continue a search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchCheckpoint {
    pub controller: Controller,
    pub episodes_done: usize,
    pub best: Option<(Genotype, f64)>,
    pub log_lines: usize,
    pub episode_lines: usize,
}

impl SearchCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        ciborium::into_writer(self, BufWriter::new(f)).map_err(|e| Error::Runtime(format!("{}: {e}", tmp.display())))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        ciborium::from_reader(BufReader::new(f)).map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchPaths {
    pub dir: PathBuf,
}

impl SearchPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SearchPaths { dir: dir.into() }
    }
    pub fn log(&self) -> PathBuf {
        self.dir.join("log.jsonl")
    }
    pub fn episodes(&self) -> PathBuf {
        self.dir.join("episodes.jsonl")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.bin")
    }
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.json")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchOptions {
    pub checkpoint_every: usize,
    /// Continue from the last checkpoint in the directory, if any.
    pub resume: bool,
    /// Return after this many episodes in total without finishing, as an
    /// interrupted process would.
    pub stop_after: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            checkpoint_every: 50,
            resume: true,
            stop_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub episodes: usize,
    pub terminated: bool,
    /// Why the loop ended: "probability", "episodes" or "interrupted".
    pub reason: String,
    pub best: Option<Genotype>,
    pub best_accuracy: f64,
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn read_model_log(path: &Path) -> Result<Vec<ModelRecord>> {
    read_lines(path)
}

pub fn read_episode_log(path: &Path) -> Result<Vec<EpisodeRecord>> {
    read_lines(path)
}

/// Keep the first `n` lines of a file.
fn truncate_lines(path: &Path, n: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let kept: String = text.lines().take(n).map(|l| format!("{l}\n")).collect();
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

fn append(path: &Path) -> Result<BufWriter<File>> {
    let f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

/// Run (or resume) a search with `env` writing into `paths.dir`.
pub fn run_search<E: Environment + HasRecords>(cfg: &RunConfig, env: &mut E, paths: &SearchPaths, opts: &SearchOptions) -> Result<SearchOutcome> {
    fs::create_dir_all(&paths.dir).map_err(|e| Error::io(&paths.dir, e))?;
    let mut state = match (opts.resume, paths.checkpoint().exists()) {
        (true, true) => {
            let ck = SearchCheckpoint::load(&paths.checkpoint())?;
            if ck.controller.config != cfg.controller {
                return Err(crate::error::config_err!("checkpoint was written with a different controller configuration"));
            }
            info!("resuming after episode {}", ck.episodes_done);
            ck
        }
        _ => SearchCheckpoint {
            controller: Controller::new(cfg.controller.clone())?,
            episodes_done: 0,
            best: None,
            log_lines: 0,
            episode_lines: 0,
        },
    };
    truncate_lines(&paths.log(), state.log_lines)?;
    truncate_lines(&paths.episodes(), state.episode_lines)?;
    if state.log_lines == 0 {
        fs::write(paths.log(), "").map_err(|e| Error::io(paths.log(), e))?;
        fs::write(paths.episodes(), "").map_err(|e| Error::io(paths.episodes(), e))?;
    }
    let mut log = append(&paths.log())?;
    let mut episodes = append(&paths.episodes())?;
    let mut reason = "episodes".to_string();
    let mut terminated = false;
    while state.episodes_done < cfg.controller.episodes {
        if opts.stop_after.is_some_and(|s| state.episodes_done >= s) {
            reason = "interrupted".into();
            break;
        }
        let e = state.episodes_done;
        let mut rng = state.controller.episode_rng(e);
        let best = state.best.as_ref().map(|(g, _)| g);
        let traj: Trajectory = state.controller.run_episode(env, e, best, &mut rng)?;
        let mut records = env.take_records();
        for r in &mut records {
            let acc = r.reward.accuracy();
            if state.best.as_ref().map_or(true, |(_, b)| acc > *b) {
                state.best = Some((r.genotype.clone(), acc));
            }
            r.best_accuracy = state.best.as_ref().map_or(0.0, |(_, b)| *b);
        }
        let stats = state.controller.update(&traj)?;
        let genos: Vec<&Genotype> = traj.steps.iter().map(|s| &s.genotype).collect();
        let rec = EpisodeRecord {
            episode: e,
            exploited: traj.exploited,
            mean_reward: traj.mean_reward(),
            max_reward: traj.steps.iter().map(|s| s.reward).fold(f64::NEG_INFINITY, f64::max),
            mean_chosen_prob: traj.mean_chosen_prob(),
            mean_entropy: traj.steps.iter().map(|s| s.entropy).sum::<f64>() / traj.steps.len() as f64,
            mean_pairwise_ged: mean_pairwise_ged(&genos),
            actor_loss: stats.actor_loss,
            critic_loss: stats.critic_loss,
            update_skipped: stats.skipped,
            best_accuracy: state.best.as_ref().map_or(0.0, |(_, b)| *b),
        };
        for r in &records {
            writeln!(log, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(paths.log(), e))?;
        }
        writeln!(episodes, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(paths.episodes(), e))?;
        state.log_lines += records.len();
        state.episode_lines += 1;
        state.episodes_done += 1;
        info!(
            "episode {}: mean reward {:.4}, mean probability {:.3}, best accuracy {:.4}",
            e, rec.mean_reward, rec.mean_chosen_prob, rec.best_accuracy
        );
        if state.episodes_done % opts.checkpoint_every.max(1) == 0 {
            log.flush().map_err(|e| Error::io(paths.log(), e))?;
            episodes.flush().map_err(|e| Error::io(paths.episodes(), e))?;
            state.save(&paths.checkpoint())?;
        }
        if state.controller.should_terminate(state.episodes_done, rec.mean_chosen_prob) {
            terminated = true;
            if state.episodes_done < cfg.controller.episodes {
                reason = "probability".into();
            }
            break;
        }
    }
    log.flush().map_err(|e| Error::io(paths.log(), e))?;
    episodes.flush().map_err(|e| Error::io(paths.episodes(), e))?;
    if let Some((g, acc)) = &state.best {
        fs::write(paths.best(), serde_json::to_string_pretty(&serde_json::json!({ "genotype": g, "accuracy": acc }))?)
            .map_err(|e| Error::io(paths.best(), e))?;
    }
    if reason != "interrupted" {
        terminated = true;
    } else {
        warn!("search interrupted after {} episodes", state.episodes_done);
    }
    Ok(SearchOutcome {
        episodes: state.episodes_done,
        terminated,
        reason,
        best: state.best.as_ref().map(|(g, _)| g.clone()),
        best_accuracy: state.best.as_ref().map_or(0.0, |(_, b)| *b),
    })
}

/// Environments that expose per-model log records for the last batch.
pub trait HasRecords {
    fn take_records(&mut self) -> Vec<ModelRecord>;
}

impl HasRecords for SearchEnvironment<'_> {
    fn take_records(&mut self) -> Vec<ModelRecord> {
        std::mem::take(&mut self.last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    #[test]
    fn seeds_differ_by_component() {
        let a = mix_seed(&[1, 2, 3]);
        assert_ne!(a, mix_seed(&[1, 3, 2]));
        assert_ne!(a, mix_seed(&[1, 2, 4]));
        assert_eq!(a, mix_seed(&[1, 2, 3]));
    }

    #[test]
    fn failures_are_recorded_not_raised() {
        let panel = SyntheticSpec {
            channels: 2,
            length: 400,
            ..SyntheticSpec::default()
        }
        .generate()
        .unwrap();
        let cfg = RunConfig::from_toml(
            "horizons = [8]\n[split]\nsubsets = 2\ntrain_windows = 100\neval_windows = 40\n[train]\nepochs = 1\n[child]\nhidden_scale = 0.05\n",
        )
        .unwrap();
        let data = validation_data(&panel, &cfg).unwrap();
        assert_eq!(data[0].train.len(), 100);
        assert_eq!(data[0].vals[1].len(), 40);
        let mut g = crate::search_space::random_genotype(&mut rand::SeedableRng::seed_from_u64(0) as &mut rand_chacha::ChaCha8Rng);
        g.layers[0] = crate::search_space::LayerGene {
            block: crate::search_space::BlockKind::Patching,
            hidden_units: Some(200),
            kernel_size: None,
            stride: Some(8),
            patch_length: Some(16),
            dropout: 0.1,
            activation1: crate::search_space::ActivationGene::single(crate::tensor::ActivationKind::ReLU),
            activation2: None,
            skip: None,
        };
        let r = evaluate_child(&g, &data[0], &cfg.train, 0.05, 1).unwrap();
        assert!(r.failure.as_deref().unwrap().contains("patch length"), "{r:?}");
        assert!(r.val_rmse.is_empty());
    }
}
