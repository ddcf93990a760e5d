//! Run configuration: one TOML file drives every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::data::SyntheticSpec;
use crate::error::{config_err, Error, Result};
use crate::evaluation::Normalization;
use crate::macro_net::TrainConfig;
use crate::reward::{RewardMode, DEFAULT_ENTROPY_SCALE, DEFAULT_GED_SCALE};

/// Input series: a CSV file or the synthetic generator, exactly one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            synthetic: Some(SyntheticSpec::default()),
        }
    }
}

/// Walk-forward plan. Range lengths follow from the window counts per
/// horizon: `len = windows - 1 + 2H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub subsets: usize,
    pub validation: usize,
    pub train_windows: usize,
    pub eval_windows: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            subsets: 17,
            validation: 2,
            train_windows: 1808,
            eval_windows: 308,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub mode: RewardMode,
    pub ged_scale: f64,
    pub entropy_scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            mode: RewardMode::WvGed,
            ged_scale: DEFAULT_GED_SCALE,
            entropy_scale: DEFAULT_ENTROPY_SCALE,
        }
    }
}

/// Sampled-network construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChildConfig {
    /// Multiplier on the sampled hidden-unit counts.
    pub hidden_scale: f64,
}

impl Default for ChildConfig {
    fn default() -> Self {
        ChildConfig { hidden_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Models in the best-by-validation ensemble.
    pub top_k: usize,
    /// Period of the seasonal-naive reference forecast.
    pub seasonal_period: usize,
    pub normalization: Normalization,
    /// Window cap when retraining on test subsets; `None` uses them all.
    pub max_train_windows: Option<usize>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            top_k: 3,
            seasonal_period: 24,
            normalization: Normalization::MinMax,
            max_train_windows: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub horizons: Vec<usize>,
    /// Worker threads for child training; 0 picks `min(10, cores)`.
    pub workers: usize,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub reward: RewardConfig,
    pub controller: ControllerConfig,
    pub train: TrainConfig,
    pub child: ChildConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            horizons: vec![48, 96, 192],
            workers: 0,
            data: DataConfig::default(),
            split: SplitConfig::default(),
            reward: RewardConfig::default(),
            controller: ControllerConfig::default(),
            train: TrainConfig::default(),
            child: ChildConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| config_err!("{}", e.message()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s).map_err(|e| match e {
            Error::Config(m) => config_err!("{}: {m}", path.display()),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn check(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(config_err!("horizons must be a nonempty list of positive lengths"));
        }
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(config_err!("data needs exactly one of `path` or `synthetic`")),
        }
        let s = &self.split;
        if s.subsets == 0 || s.train_windows == 0 || s.eval_windows == 0 {
            return Err(config_err!("split subsets and window counts must be positive"));
        }
        if s.validation < 2 || s.validation > s.subsets {
            return Err(config_err!("split.validation must be at least 2 and at most split.subsets"));
        }
        if !(self.reward.ged_scale >= 0.0) || !(self.reward.entropy_scale >= 0.0) {
            return Err(config_err!("reward scales must be nonnegative"));
        }
        if !(self.child.hidden_scale > 0.0) {
            return Err(config_err!("child.hidden_scale must be positive"));
        }
        if self.evaluate.top_k == 0 || self.evaluate.seasonal_period == 0 {
            return Err(config_err!("evaluate.top_k and evaluate.seasonal_period must be positive"));
        }
        self.controller.check()?;
        self.train.check()
    }

    /// Effective worker count.
    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            return self.workers;
        }
        std::thread::available_parallelism().map_or(1, |n| n.get()).min(10)
    }

    /// `(train_len, eval_len)` of the plan for horizon `h`.
    pub fn range_lengths(&self, h: usize) -> (usize, usize) {
        crate::data::lengths_for_windows(self.split.train_windows, self.split.eval_windows, h)
    }
}
