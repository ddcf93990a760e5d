use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::panel::Panel;
use super::window::{windowize, WindowSet};
use crate::error::{config_err, data_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetRole {
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub index: usize,
    pub role: SubsetRole,
    pub train: Range<usize>,
    pub eval: Range<usize>,
    /// Per-channel statistics of the train range.
    pub stats: Vec<ChannelStats>,
}

/// Rolling-origin split: each evaluation range starts where the previous
/// one ended and is preceded by its own fixed-length train range. The plan is
/// anchored at the end of the panel so the latest data is evaluated last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardPlan {
    pub channels: Vec<String>,
    pub train_len: usize,
    pub eval_len: usize,
    pub subsets: Vec<Subset>,
}

/// Range lengths yielding the given window counts for input/output length `horizon`.
pub fn lengths_for_windows(train_windows: usize, eval_windows: usize, horizon: usize) -> (usize, usize) {
    (train_windows - 1 + 2 * horizon, eval_windows - 1 + 2 * horizon)
}

/// Per-channel mean and population standard deviation of a time x channel block.
pub fn channel_stats(rows: &[f64], channels: usize) -> Vec<ChannelStats> {
    let n = (rows.len() / channels) as f64;
    (0..channels)
        .map(|c| {
            let mean = rows.iter().skip(c).step_by(channels).sum::<f64>() / n;
            let var = rows.iter().skip(c).step_by(channels).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            ChannelStats { mean, std: var.sqrt() }
        })
        .collect()
}

pub fn walk_forward_split(
    panel: &Panel,
    n_subsets: usize,
    train_len: usize,
    eval_len: usize,
    n_validation: usize,
) -> Result<WalkForwardPlan> {
    if n_subsets == 0 || train_len == 0 || eval_len == 0 {
        return Err(config_err!("subset count and lengths must be positive"));
    }
    if n_validation > n_subsets {
        return Err(config_err!("{n_validation} validation subsets requested out of {n_subsets}"));
    }
    let required = n_subsets * eval_len + train_len;
    if panel.len() < required {
        return Err(data_err!(
            "walk-forward plan needs {required} hourly points ({n_subsets} x {eval_len} + {train_len}), {} available",
            panel.len()
        ));
    }
    let c = panel.num_channels();
    let offset = panel.len() - required;
    let mut subsets = Vec::with_capacity(n_subsets);
    for k in 0..n_subsets {
        let eval_start = offset + train_len + k * eval_len;
        let train = eval_start - train_len..eval_start;
        let stats = channel_stats(panel.rows(train.start, train.end), c);
        for (j, s) in stats.iter().enumerate() {
            if s.std <= 0.0 || !s.std.is_finite() {
                return Err(data_err!(
                    "channel `{}` is constant on the train range of subset {}",
                    panel.channels[j],
                    k + 1
                ));
            }
        }
        subsets.push(Subset {
            index: k,
            role: if k < n_validation { SubsetRole::Validation } else { SubsetRole::Test },
            train,
            eval: eval_start..eval_start + eval_len,
            stats,
        });
    }
    Ok(WalkForwardPlan {
        channels: panel.channels.clone(),
        train_len,
        eval_len,
        subsets,
    })
}

/// A range of a panel transformed with one subset's train statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedRange {
    pub channels: usize,
    /// Time x channel, standardized.
    pub values: Vec<f64>,
}

impl StandardizedRange {
    pub fn len(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn windows(&self, length: usize) -> Result<WindowSet> {
        windowize(&self.values, self.channels, length)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetData {
    pub index: usize,
    pub role: SubsetRole,
    pub stats: Vec<ChannelStats>,
    pub train: StandardizedRange,
    pub eval: StandardizedRange,
}

pub fn standardize_rows(rows: &[f64], stats: &[ChannelStats]) -> Vec<f64> {
    let c = stats.len();
    rows.iter()
        .enumerate()
        .map(|(i, v)| {
            let s = stats[i % c];
            (v - s.mean) / s.std
        })
        .collect()
}

pub fn destandardize_rows(rows: &[f64], stats: &[ChannelStats]) -> Vec<f64> {
    let c = stats.len();
    rows.iter()
        .enumerate()
        .map(|(i, v)| {
            let s = stats[i % c];
            v * s.std + s.mean
        })
        .collect()
}

impl WalkForwardPlan {
    pub fn validation(&self) -> impl Iterator<Item = &Subset> {
        self.subsets.iter().filter(|s| s.role == SubsetRole::Validation)
    }

    pub fn test(&self) -> impl Iterator<Item = &Subset> {
        self.subsets.iter().filter(|s| s.role == SubsetRole::Test)
    }

    /// Train and evaluation ranges of subset `k` in its own standardized units.
    pub fn standardize(&self, panel: &Panel, k: usize) -> Result<SubsetData> {
        let s = self
            .subsets
            .get(k)
            .ok_or_else(|| config_err!("subset {k} does not exist (plan has {})", self.subsets.len()))?;
        if panel.channels != self.channels || panel.len() < s.eval.end {
            return Err(data_err!("panel does not match the plan"));
        }
        let c = panel.num_channels();
        Ok(SubsetData {
            index: s.index,
            role: s.role,
            stats: s.stats.clone(),
            train: StandardizedRange {
                channels: c,
                values: standardize_rows(panel.rows(s.train.start, s.train.end), &s.stats),
            },
            eval: StandardizedRange {
                channels: c,
                values: standardize_rows(panel.rows(s.eval.start, s.eval.end), &s.stats),
            },
        })
    }
}
