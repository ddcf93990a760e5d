use chrono::{NaiveDateTime, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::panel::{parse_timestamp, Panel};
use crate::error::{config_err, Result};

/// Sum of sinusoids, a continuous piecewise-linear trend and Gaussian noise,
/// one independent draw of amplitudes, phases and slopes per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub channels: usize,
    pub length: usize,
    pub periods: Vec<f64>,
    pub trend_segments: usize,
    /// Standard deviation of per-segment trend slopes, per hour.
    pub trend_slope_std: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub start: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            channels: 6,
            length: 6000,
            periods: vec![24.0, 168.0],
            trend_segments: 4,
            trend_slope_std: 0.002,
            noise_std: 0.3,
            seed: 7,
            start: "2020-01-01T00:00:00".into(),
        }
    }
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<Panel> {
        if self.channels == 0 || self.length == 0 || self.trend_segments == 0 {
            return Err(config_err!("synthetic generator needs positive channels, length and trend segments"));
        }
        if self.noise_std < 0.0 || self.trend_slope_std < 0.0 || self.periods.iter().any(|p| *p <= 0.0) {
            return Err(config_err!("synthetic generator needs nonnegative scales and positive periods"));
        }
        let start: NaiveDateTime =
            parse_timestamp(&self.start).ok_or_else(|| config_err!("invalid synthetic start `{}`", self.start))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| config_err!("{e}"))?;
        let slope = Normal::new(0.0, self.trend_slope_std).map_err(|e| config_err!("{e}"))?;
        let (n, c) = (self.length, self.channels);
        let mut values = vec![0.0; n * c];
        let seg_len = n.div_ceil(self.trend_segments);
        for ch in 0..c {
            let level = 10.0 + ch as f64;
            let waves: Vec<(f64, f64, f64)> = self
                .periods
                .iter()
                .map(|&p| (p, rng.gen_range(0.5..2.0), rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect();
            let slopes: Vec<f64> = (0..self.trend_segments).map(|_| slope.sample(&mut rng)).collect();
            let mut trend = 0.0;
            for t in 0..n {
                if t > 0 {
                    trend += slopes[(t / seg_len).min(slopes.len() - 1)];
                }
                let seasonal: f64 = waves
                    .iter()
                    .map(|(p, a, phi)| a * (std::f64::consts::TAU * t as f64 / p + phi).sin())
                    .sum();
                values[t * c + ch] = level + trend + seasonal + noise.sample(&mut rng);
            }
        }
        let timestamps = (0..n).map(|t| start + TimeDelta::hours(t as i64)).collect();
        let channels = (0..c).map(|i| format!("ch{}", i + 1)).collect();
        Panel::new(timestamps, channels, values)
    }
}
