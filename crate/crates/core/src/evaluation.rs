//! Error metrics, per-step correlations and TOPSIS rankings.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{usage_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mse: f64,
    pub mae: f64,
    pub medae: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Metrics over every element of `preds` against `trues`.
pub fn metrics(preds: &[f64], trues: &[f64]) -> Result<Metrics> {
    if preds.len() != trues.len() {
        return Err(usage_err!("metrics: {} predictions for {} targets", preds.len(), trues.len()));
    }
    if preds.is_empty() {
        return Err(usage_err!("metrics: empty input"));
    }
    let n = preds.len() as f64;
    let mut abs: Vec<f64> = preds.iter().zip(trues).map(|(p, t)| (p - t).abs()).collect();
    let mse = abs.iter().map(|a| a * a).sum::<f64>() / n;
    let mae = abs.iter().sum::<f64>() / n;
    let medae = median(&mut abs);
    Ok(Metrics {
        rmse: mse.sqrt(),
        mse,
        mae,
        medae,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation per forecast step of `(N, H, C)` forecasts, pooled
/// over windows and channels. Zero-variance steps give `None`.
pub fn stepwise_correlation(preds: &Tensor, trues: &Tensor) -> Result<Vec<Option<f64>>> {
    if preds.shape() != trues.shape() || preds.rank() != 3 {
        return Err(usage_err!("stepwise_correlation: shapes {:?} and {:?}", preds.shape(), trues.shape()));
    }
    let (n, h, c) = (preds.shape()[0], preds.shape()[1], preds.shape()[2]);
    if n < 2 {
        return Err(usage_err!("stepwise_correlation needs at least 2 windows, got {n}"));
    }
    let (p, t) = (preds.data(), trues.data());
    let mut xs = Vec::with_capacity(n * c);
    let mut ys = Vec::with_capacity(n * c);
    let mut out = Vec::with_capacity(h);
    for step in 0..h {
        xs.clear();
        ys.clear();
        for w in 0..n {
            let base = (w * h + step) * c;
            xs.extend_from_slice(&p[base..base + c]);
            ys.extend_from_slice(&t[base..base + c]);
        }
        out.push(pearson(&xs, &ys));
    }
    Ok(out)
}

/// Element-wise mean of correlation vectors, skipping undefined entries.
pub fn mean_correlation(vectors: &[Vec<Option<f64>>]) -> Vec<Option<f64>> {
    let h = vectors.iter().map(Vec::len).max().unwrap_or(0);
    (0..h)
        .map(|s| {
            let vals: Vec<f64> = vectors.iter().filter_map(|v| v.get(s).copied().flatten()).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// Repeat the last `period` inputs across the horizon. Inputs `(N, L, C)`.
pub fn seasonal_naive(inputs: &Tensor, horizon: usize, period: usize) -> Result<Tensor> {
    let s = inputs.shape();
    if s.len() != 3 {
        return Err(usage_err!("seasonal_naive expects (N, L, C) inputs, got {s:?}"));
    }
    let (n, l, c) = (s[0], s[1], s[2]);
    if period == 0 || period > l {
        return Err(usage_err!("seasonal period {period} must be in 1..={l}"));
    }
    let x = inputs.data();
    let mut out = Vec::with_capacity(n * horizon * c);
    for w in 0..n {
        for j in 0..horizon {
            let src = l - period + j % period;
            out.extend_from_slice(&x[(w * l + src) * c..(w * l + src + 1) * c]);
        }
    }
    Tensor::new(vec![n, horizon, c], out)
}

/// Mean of several `(N, H, C)` forecasts.
pub fn ensemble_mean(forecasts: &[Tensor]) -> Result<Tensor> {
    let first = forecasts.first().ok_or_else(|| usage_err!("ensemble of zero forecasts"))?;
    let mut acc = vec![0.0; first.len()];
    for f in forecasts {
        if f.shape() != first.shape() {
            return Err(usage_err!("ensemble members disagree on shape: {:?} vs {:?}", f.shape(), first.shape()));
        }
        for (a, v) in acc.iter_mut().zip(f.data()) {
            *a += v;
        }
    }
    let k = forecasts.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Tensor::new(first.shape().to_vec(), acc)
}

// ---- TOPSIS -----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide each column by its Euclidean norm.
    Vector,
    /// Map each column linearly onto [0, 1].
    #[default]
    MinMax,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Vector => "vector",
            Normalization::MinMax => "min_max",
        })
    }
}

impl FromStr for Normalization {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vector" => Ok(Normalization::Vector),
            "min_max" | "minmax" => Ok(Normalization::MinMax),
            _ => Err(crate::error::config_err!("unknown normalization `{s}` (expected vector or min_max)")),
        }
    }
}

/// Alternatives by criteria, all cost-type (lower is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopsisMatrix {
    pub alternatives: Vec<String>,
    pub criteria: Vec<String>,
    /// Row per alternative.
    pub values: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Secondary key for ties (aggregate RMSE); falls back to the name.
    pub tie_break: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopsisResult {
    pub closeness: Vec<f64>,
    /// 1-based rank per alternative.
    pub ranks: Vec<usize>,
}

pub fn topsis_rank(m: &TopsisMatrix, norm: Normalization) -> Result<TopsisResult> {
    let n = m.alternatives.len();
    let k = m.criteria.len();
    if n < 2 {
        return Err(usage_err!("TOPSIS needs at least 2 alternatives"));
    }
    if m.values.len() != n || m.values.iter().any(|r| r.len() != k) || m.weights.len() != k || m.tie_break.len() != n {
        return Err(usage_err!("TOPSIS matrix dimensions are inconsistent"));
    }
    if m.weights.iter().any(|w| *w < 0.0) || (m.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(usage_err!("TOPSIS weights must be nonnegative and sum to 1"));
    }
    let mut v = vec![vec![0.0; k]; n];
    for j in 0..k {
        let col: Vec<f64> = m.values.iter().map(|r| r[j]).collect();
        if col.iter().any(|x| !x.is_finite()) {
            return Err(usage_err!("criterion `{}` has non-finite values", m.criteria[j]));
        }
        let scaled: Vec<f64> = match norm {
            Normalization::Vector => {
                let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(usage_err!("criterion `{}` is all zero", m.criteria[j]));
                }
                col.iter().map(|x| x / norm).collect()
            }
            Normalization::MinMax => {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi == lo {
                    return Err(usage_err!("criterion `{}` is constant", m.criteria[j]));
                }
                col.iter().map(|x| (x - lo) / (hi - lo)).collect()
            }
        };
        for (i, s) in scaled.into_iter().enumerate() {
            v[i][j] = s * m.weights[j];
        }
    }
    let ideal: Vec<f64> = (0..k).map(|j| v.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min)).collect();
    let anti: Vec<f64> = (0..k).map(|j| v.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let dist = |r: &[f64], p: &[f64]| r.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let closeness: Vec<f64> = v
        .iter()
        .map(|r| {
            let (dp, dm) = (dist(r, &ideal), dist(r, &anti));
            if dp + dm == 0.0 {
                1.0
            } else {
                dm / (dp + dm)
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        closeness[b]
            .total_cmp(&closeness[a])
            .then_with(|| m.tie_break[a].total_cmp(&m.tie_break[b]))
            .then_with(|| m.alternatives[a].cmp(&m.alternatives[b]))
    });
    let mut ranks = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    Ok(TopsisResult { closeness, ranks })
}

/// Split of the total weight between the four error metrics and runtime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub error: f64,
    pub time: f64,
}

impl WeightScheme {
    /// `[rmse, mse, mae, medae, time]` weights.
    pub fn weights(&self) -> [f64; 5] {
        let e = self.error / 4.0;
        [e, e, e, e, self.time]
    }

    pub fn label(&self) -> String {
        format!("[{:.1}, {:.1}]", self.error, self.time)
    }
}

/// The nine schemes from (0.1, 0.9) to (0.9, 0.1).
pub fn weight_schemes() -> Vec<WeightScheme> {
    (1..=9)
        .map(|i| WeightScheme {
            error: i as f64 / 10.0,
            time: (10 - i) as f64 / 10.0,
        })
        .collect()
}

/// One model's row of the ranking inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    pub metrics: Metrics,
    /// Train plus test wall-clock minutes.
    pub minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub model: String,
    pub metrics: Metrics,
    pub minutes: f64,
    /// Rank per weight scheme, in [`weight_schemes`] order.
    pub ranks: Vec<usize>,
    pub closeness: Vec<f64>,
    pub average_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub normalization: Normalization,
    pub schemes: Vec<WeightScheme>,
    pub rows: Vec<RankingRow>,
}

pub const CRITERIA: [&str; 5] = ["rmse", "mse", "mae", "medae", "minutes"];

pub fn rank_models(models: &[ModelScore], norm: Normalization) -> Result<RankingTable> {
    let schemes = weight_schemes();
    let values: Vec<Vec<f64>> = models
        .iter()
        .map(|m| vec![m.metrics.rmse, m.metrics.mse, m.metrics.mae, m.metrics.medae, m.minutes])
        .collect();
    let mut rows: Vec<RankingRow> = models
        .iter()
        .map(|m| RankingRow {
            model: m.model.clone(),
            metrics: m.metrics,
            minutes: m.minutes,
            ranks: Vec::with_capacity(schemes.len()),
            closeness: Vec::with_capacity(schemes.len()),
            average_rank: 0.0,
        })
        .collect();
    for s in &schemes {
        let r = topsis_rank(
            &TopsisMatrix {
                alternatives: models.iter().map(|m| m.model.clone()).collect(),
                criteria: CRITERIA.iter().map(|c| c.to_string()).collect(),
                values: values.clone(),
                weights: s.weights().to_vec(),
                tie_break: models.iter().map(|m| m.metrics.rmse).collect(),
            },
            norm,
        )?;
        for (row, (rank, c)) in rows.iter_mut().zip(r.ranks.into_iter().zip(r.closeness)) {
            row.ranks.push(rank);
            row.closeness.push(c);
        }
    }
    for row in &mut rows {
        row.average_rank = row.ranks.iter().sum::<usize>() as f64 / row.ranks.len() as f64;
    }
    rows.sort_by(|a, b| a.average_rank.total_cmp(&b.average_rank).then_with(|| a.model.cmp(&b.model)));
    Ok(RankingTable {
        normalization: norm,
        schemes,
        rows,
    })
}

impl RankingTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["model", "rmse", "mse", "mae", "medae", "minutes"].iter().map(|s| s.to_string()).collect();
        header.extend(self.schemes.iter().map(|s| format!("rank_{:.1}_{:.1}", s.error, s.time)));
        header.push("average_rank".into());
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.model.clone(),
                r.metrics.rmse.to_string(),
                r.metrics.mse.to_string(),
                r.metrics.mae.to_string(),
                r.metrics.medae.to_string(),
                r.minutes.to_string(),
            ];
            rec.extend(r.ranks.iter().map(usize::to_string));
            rec.push(format!("{:.3}", r.average_rank));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| crate::Error::Runtime(e.to_string()))?;
        Ok(())
    }
}

/// Fractional ranks (ties share the mean position), 1-based.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(Ordering::Equal));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&fractional_ranks(a), &fractional_ranks(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_examples() {
        let m = metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m.rmse, m.mse, m.mae, m.medae), (0.0, 0.0, 0.0, 0.0));
        let m = metrics(&[-1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!((m.rmse, m.mse, m.mae, m.medae), (1.0, 1.0, 1.0, 1.0));
        let m = metrics(&[0.0, 0.0, 3.0], &[0.0; 3]).unwrap();
        assert_eq!((m.mae, m.medae, m.mse), (1.0, 0.0, 3.0));
        assert_eq!(m.rmse, 3f64.sqrt());
        assert!(metrics(&[], &[]).is_err());
    }

    #[test]
    fn rmse_is_root_of_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let n = rng.gen_range(1..50);
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let m = metrics(&p, &t).unwrap();
            assert_eq!(m.rmse, m.mse.sqrt());
            assert!(m.mae >= 0.0 && m.medae >= 0.0);
        }
    }

    fn tensor(n: usize, h: usize, c: usize, f: impl FnMut(usize) -> f64) -> Tensor {
        Tensor::new(vec![n, h, c], (0..n * h * c).map(f).collect()).unwrap()
    }

    #[test]
    fn correlation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = tensor(50, 4, 2, |_| rng.gen_range(-1.0..1.0));
        let same = stepwise_correlation(&t, &t).unwrap();
        assert!(same.iter().all(|r| (r.unwrap() - 1.0).abs() < 1e-12));
        let neg = tensor(50, 4, 2, |i| -t.data()[i]);
        assert!(stepwise_correlation(&neg, &t).unwrap().iter().all(|r| (r.unwrap() + 1.0).abs() < 1e-12));
        let big = tensor(10_000, 3, 1, |_| rng.gen_range(-1.0..1.0));
        let noise = tensor(10_000, 3, 1, |_| rng.gen_range(-1.0..1.0));
        assert!(stepwise_correlation(&noise, &big).unwrap().iter().all(|r| r.unwrap().abs() < 0.1));
        let flat = tensor(5, 2, 1, |_| 3.0);
        assert_eq!(stepwise_correlation(&flat, &tensor(5, 2, 1, |i| i as f64)).unwrap(), vec![None, None]);
        assert_eq!(mean_correlation(&[vec![Some(0.5), None], vec![Some(1.0), Some(0.2)]]), vec![Some(0.75), Some(0.2)]);
    }

    #[test]
    fn seasonal_naive_repeats_last_period() {
        let x = Tensor::new(vec![1, 6, 1], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let f = seasonal_naive(&x, 5, 3).unwrap();
        assert_eq!(f.data(), &[3.0, 4.0, 5.0, 3.0, 4.0]);
        assert!(seasonal_naive(&x, 5, 7).is_err());
    }

    fn matrix(values: Vec<Vec<f64>>, weights: Vec<f64>) -> TopsisMatrix {
        let n = values.len();
        TopsisMatrix {
            alternatives: (0..n).map(|i| format!("m{i}")).collect(),
            criteria: (0..weights.len()).map(|j| format!("c{j}")).collect(),
            tie_break: vec![0.0; n],
            values,
            weights,
        }
    }

    /// Closeness computed directly from the textbook definition.
    fn oracle(values: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
        let k = w.len();
        let norms: Vec<f64> = (0..k).map(|j| values.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt()).collect();
        let v: Vec<Vec<f64>> = values.iter().map(|r| (0..k).map(|j| w[j] * r[j] / norms[j]).collect()).collect();
        v.iter()
            .map(|r| {
                let mut dp = 0.0;
                let mut dm = 0.0;
                for j in 0..k {
                    let best = v.iter().map(|x| x[j]).fold(f64::MAX, f64::min);
                    let worst = v.iter().map(|x| x[j]).fold(f64::MIN, f64::max);
                    dp += (r[j] - best).powi(2);
                    dm += (r[j] - worst).powi(2);
                }
                dm.sqrt() / (dp.sqrt() + dm.sqrt())
            })
            .collect()
    }

    #[test]
    fn topsis_examples() {
        for norm in [Normalization::Vector, Normalization::MinMax] {
            let m = matrix(vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]], vec![0.5, 0.5]);
            let r = topsis_rank(&m, norm).unwrap();
            assert_eq!(r.ranks, vec![1, 2, 3]);
            assert!((r.closeness[0] - 1.0).abs() < 1e-12);

            let mut m = matrix(vec![vec![2.0, 1.0], vec![1.0, 3.0], vec![2.0, 1.0]], vec![0.5, 0.5]);
            m.tie_break = vec![0.7, 0.1, 0.3];
            let r = topsis_rank(&m, norm).unwrap();
            assert_eq!(r.closeness[0], r.closeness[2]);
            assert!(r.ranks[2] < r.ranks[0]);
        }
        let m = matrix(vec![vec![0.0, 1.0], vec![0.0, 2.0]], vec![0.5, 0.5]);
        let e = topsis_rank(&m, Normalization::Vector).unwrap_err().to_string();
        assert!(e.contains("c0"), "{e}");
        assert!(topsis_rank(&m, Normalization::MinMax).unwrap_err().to_string().contains("c0"));
    }

    #[test]
    fn topsis_matches_oracle_and_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(2..9);
            let values: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.gen_range(0.1..10.0)).collect()).collect();
            let scheme = weight_schemes()[rng.gen_range(0..9)];
            let m = matrix(values.clone(), scheme.weights().to_vec());
            let r = topsis_rank(&m, Normalization::Vector).unwrap();
            for (a, b) in r.closeness.iter().zip(oracle(&values, &scheme.weights())) {
                assert!((a - b).abs() < 1e-12);
            }
            for norm in [Normalization::Vector, Normalization::MinMax] {
                let base = topsis_rank(&m, norm).unwrap().ranks;
                let col = rng.gen_range(0..5);
                let c = rng.gen_range(0.01..100.0);
                let mut scaled = m.clone();
                scaled.values.iter_mut().for_each(|r| r[col] *= c);
                assert_eq!(topsis_rank(&scaled, norm).unwrap().ranks, base);
            }
        }
    }

    #[test]
    fn weight_scheme_catalog() {
        let s = weight_schemes();
        assert_eq!(s.len(), 9);
        assert_eq!(s[3].weights(), [0.1, 0.1, 0.1, 0.1, 0.6]);
        for w in &s {
            assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_and_ranks() {
        assert_eq!(fractional_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn average_rank_is_mean_of_scheme_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let models: Vec<ModelScore> = (0..6)
            .map(|i| {
                let p: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
                ModelScore {
                    model: format!("m{i}"),
                    metrics: metrics(&p, &[0.0; 20]).unwrap(),
                    minutes: rng.gen_range(0.1..5.0),
                }
            })
            .collect();
        let t = rank_models(&models, Normalization::MinMax).unwrap();
        for r in &t.rows {
            let mean = r.ranks.iter().sum::<usize>() as f64 / 9.0;
            assert_eq!(r.average_rank, mean);
        }
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("model,rmse,mse,mae,medae,minutes,rank_0.1_0.9"));
    }
}
