//! Reward composition: accuracy, walk-forward penalty, diversity or entropy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Error, Result};
use crate::ged::ged;
use crate::search_space::Genotype;

/// Inverse RMSE assigned to a perfect fit.
pub const INV_RMSE_CLAMP: f64 = 1e6;
pub const DEFAULT_GED_SCALE: f64 = 10.0;
pub const DEFAULT_ENTROPY_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    WvGed,
    Entropy,
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardMode::WvGed => "wv_ged",
            RewardMode::Entropy => "entropy",
        })
    }
}

impl FromStr for RewardMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wv_ged" => Ok(RewardMode::WvGed),
            "entropy" => Ok(RewardMode::Entropy),
            _ => Err(config_err!("unknown reward mode `{s}` (expected wv_ged or entropy)")),
        }
    }
}

pub fn rmse(preds: &[f64], trues: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != trues.len() {
        return Err(usage_err!("rmse needs equal non-empty inputs, got {} and {}", preds.len(), trues.len()));
    }
    let mse = preds.iter().zip(trues).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64;
    Ok(mse.sqrt())
}

/// `1 / rmse`, with a perfect fit clamped to [`INV_RMSE_CLAMP`] and a
/// non-finite error mapped to 0.
pub fn inverse_of(rmse: f64) -> f64 {
    if !rmse.is_finite() {
        0.0
    } else if rmse == 0.0 {
        INV_RMSE_CLAMP
    } else {
        (1.0 / rmse).min(INV_RMSE_CLAMP)
    }
}

pub fn inverse_rmse(preds: &[f64], trues: &[f64]) -> Result<f64> {
    Ok(inverse_of(rmse(preds, trues)?))
}

/// Walk-forward penalty: `-2 (e_i - e_next)` when accuracy drops on the later
/// subset, else 0.
pub fn wv_penalty(e_i: f64, e_next: f64) -> f64 {
    if e_i > e_next {
        -2.0 * (e_i - e_next)
    } else {
        0.0
    }
}

/// `scale` times the mean GED between `current` and the earlier genotypes.
pub fn ged_diversity_term(history: &[Genotype], current: &Genotype, scale: f64) -> f64 {
    if history.is_empty() {
        return 0.0;
    }
    let sum: f64 = history.iter().map(|h| ged(current, h)).sum();
    scale * sum / history.len() as f64
}

/// `scale` times the mean normalized Shannon entropy over heads.
pub fn entropy_term(heads: &[Vec<f64>], scale: f64) -> f64 {
    if heads.is_empty() {
        return 0.0;
    }
    let sum: f64 = heads
        .iter()
        .map(|p| {
            if p.len() < 2 {
                return 0.0;
            }
            let h: f64 = p.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).sum();
            h / (p.len() as f64).ln()
        })
        .sum();
    scale * sum / heads.len() as f64
}

/// Inverse RMSE of one horizon setting on the validation subsets, in subset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonScores {
    pub horizon: usize,
    pub e_inv: Vec<f64>,
}

/// Raw ingredients for [`compose_reward`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardParts {
    pub horizons: Vec<HorizonScores>,
    pub ged_term: Option<f64>,
    pub entropy_term: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub mode: RewardMode,
    pub e_inv: Vec<HorizonScores>,
    /// Summed walk-forward penalty over horizons (0 in entropy mode).
    pub wv: f64,
    pub wv_by_horizon: Vec<f64>,
    pub ged_term: Option<f64>,
    pub entropy_term: Option<f64>,
    pub total: f64,
}

impl RewardBreakdown {
    /// Accuracy term: summed inverse RMSE on the first validation subset.
    pub fn accuracy(&self) -> f64 {
        self.e_inv.iter().map(|h| h.e_inv.first().copied().unwrap_or(0.0)).sum()
    }
}

pub fn compose_reward(mode: RewardMode, parts: RewardParts) -> Result<RewardBreakdown> {
    let accuracy: f64 = parts.horizons.iter().map(|h| h.e_inv.first().copied().unwrap_or(0.0)).sum();
    match mode {
        RewardMode::WvGed => {
            if parts.entropy_term.is_some() {
                return Err(usage_err!("entropy term supplied to a wv_ged reward"));
            }
            let ged_term = parts.ged_term.ok_or_else(|| usage_err!("wv_ged reward needs a ged term"))?;
            let mut wv_by_horizon = Vec::with_capacity(parts.horizons.len());
            for h in &parts.horizons {
                if h.e_inv.len() < 2 {
                    return Err(usage_err!("horizon {} needs two validation subsets for the wv term", h.horizon));
                }
                wv_by_horizon.push(wv_penalty(h.e_inv[0], h.e_inv[1]));
            }
            let wv: f64 = wv_by_horizon.iter().sum();
            Ok(RewardBreakdown {
                mode,
                total: accuracy + wv + ged_term,
                e_inv: parts.horizons,
                wv,
                wv_by_horizon,
                ged_term: Some(ged_term),
                entropy_term: None,
            })
        }
        RewardMode::Entropy => {
            if parts.ged_term.is_some() {
                return Err(usage_err!("ged term supplied to an entropy reward"));
            }
            let e = parts.entropy_term.ok_or_else(|| usage_err!("entropy reward needs an entropy term"))?;
            Ok(RewardBreakdown {
                mode,
                total: accuracy + e,
                e_inv: parts.horizons,
                wv: 0.0,
                wv_by_horizon: Vec::new(),
                ged_term: None,
                entropy_term: Some(e),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::random_genotype;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hs(horizon: usize, e: &[f64]) -> HorizonScores {
        HorizonScores {
            horizon,
            e_inv: e.to_vec(),
        }
    }

    #[test]
    fn inverse_rmse_examples() {
        assert_eq!(inverse_of(0.5), 2.0);
        assert_eq!(inverse_rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), INV_RMSE_CLAMP);
        assert!((inverse_of(0.446) - 2.242).abs() < 1e-3);
        assert!(matches!(inverse_rmse(&[], &[]), Err(Error::Usage(_))));
        assert_eq!(inverse_of(f64::NAN), 0.0);
    }

    #[test]
    fn wv_examples() {
        assert!((wv_penalty(0.5, 0.4) - -0.2).abs() < 1e-15);
        assert_eq!(wv_penalty(0.4, 0.4), 0.0);
        assert_eq!(wv_penalty(0.3, 0.5), 0.0);
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_term(&[vec![0.25; 4], vec![0.5; 2]], 10.0) - 10.0).abs() < 1e-12);
        assert_eq!(entropy_term(&[vec![1.0, 0.0], vec![0.0, 0.0, 1.0]], 10.0), 0.0);
        assert_eq!(entropy_term(&[vec![0.5, 0.5], vec![0.0, 1.0, 0.0, 0.0]], 10.0), 5.0);
    }

    #[test]
    fn ged_term_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = random_genotype(&mut rng);
        assert_eq!(ged_diversity_term(&[g.clone()], &g, 10.0), 0.0);
        assert_eq!(ged_diversity_term(&[], &g, 10.0), 0.0);
    }

    #[test]
    fn composition_examples() {
        let r = compose_reward(
            RewardMode::WvGed,
            RewardParts {
                horizons: vec![hs(48, &[2.0, 2.0]), hs(96, &[1.9, 1.9]), hs(192, &[1.8, 1.8])],
                ged_term: Some(1.5),
                entropy_term: None,
            },
        )
        .unwrap();
        assert_eq!(r.total, 7.2);
        assert_eq!(r.wv, 0.0);

        let failed = compose_reward(
            RewardMode::WvGed,
            RewardParts {
                horizons: vec![hs(48, &[0.0, 0.0]), hs(96, &[0.0, 0.0])],
                ged_term: Some(3.0),
                entropy_term: None,
            },
        )
        .unwrap();
        assert_eq!(failed.total, 3.0);

        let e = compose_reward(
            RewardMode::Entropy,
            RewardParts {
                horizons: vec![hs(48, &[2.5]), hs(96, &[1.5])],
                ged_term: None,
                entropy_term: Some(entropy_term(&[vec![0.5, 0.5]], 10.0)),
            },
        )
        .unwrap();
        assert_eq!(e.total, 14.0);

        let mixed = RewardParts {
            horizons: vec![hs(48, &[1.0, 1.0])],
            ged_term: Some(1.0),
            entropy_term: Some(1.0),
        };
        assert!(matches!(compose_reward(RewardMode::WvGed, mixed.clone()), Err(Error::Usage(_))));
        assert!(matches!(compose_reward(RewardMode::Entropy, mixed), Err(Error::Usage(_))));
    }
}
