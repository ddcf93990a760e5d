use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{data_err, Error, Result};

/// Longest run of consecutive missing hours that is filled by interpolation.
pub const MAX_FILL_HOURS: usize = 3;

/// Hourly multi-channel series, stored row-major as time x channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub timestamps: Vec<NaiveDateTime>,
    pub channels: Vec<String>,
    pub values: Vec<f64>,
}

/// A run of filled values reported by [`load_panel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilledGap {
    /// `None` when whole rows were missing from the file.
    pub channel: Option<String>,
    pub start: NaiveDateTime,
    pub hours: usize,
}

impl Panel {
    pub fn new(timestamps: Vec<NaiveDateTime>, channels: Vec<String>, values: Vec<f64>) -> Result<Panel> {
        if values.len() != timestamps.len() * channels.len() {
            return Err(data_err!(
                "{} values for {} timestamps x {} channels",
                values.len(),
                timestamps.len(),
                channels.len()
            ));
        }
        if channels.is_empty() {
            return Err(data_err!("a panel needs at least one channel"));
        }
        for w in timestamps.windows(2) {
            if w[1] - w[0] != TimeDelta::hours(1) {
                return Err(data_err!("timestamps {} and {} are not one hour apart", w[0], w[1]));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(data_err!("panel contains non-finite values"));
        }
        Ok(Panel {
            timestamps,
            channels,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn value(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.channels.len() + c]
    }

    /// Rows `start..end` as a flat time x channel buffer.
    pub fn rows(&self, start: usize, end: usize) -> &[f64] {
        let c = self.channels.len();
        &self.values[start * c..end * c]
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.channels.iter().cloned());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        let c = self.channels.len();
        for (t, ts) in self.timestamps.iter().enumerate() {
            let mut rec = vec![ts.format("%Y-%m-%dT%H:%M:%S").to_string()];
            rec.extend(self.values[t * c..(t + 1) * c].iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    data_err!("{}: {e}", path.display())
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Read a CSV panel: header row, ISO-8601 timestamp first, numeric channels after.
///
/// Rows are sorted by time. Runs of up to [`MAX_FILL_HOURS`] missing hours,
/// whether absent rows or empty cells, are linearly interpolated; longer runs
/// and missing values at either end are rejected.
pub fn load_panel(path: impl AsRef<Path>) -> Result<(Panel, Vec<FilledGap>)> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 {
        return Err(data_err!("{}: need a timestamp column and at least one channel", path.display()));
    }
    let channels: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let c = channels.len();
    let mut rows: Vec<(NaiveDateTime, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != c + 1 {
            return Err(data_err!("{} line {line}: expected {} fields, found {}", path.display(), c + 1, rec.len()));
        }
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| data_err!("{} line {line}: unparsable timestamp `{}`", path.display(), &rec[0]))?;
        let mut vals = Vec::with_capacity(c);
        for (j, f) in rec.iter().skip(1).enumerate() {
            if f.is_empty() || f.eq_ignore_ascii_case("nan") {
                vals.push(f64::NAN);
            } else {
                let v: f64 = f.parse().map_err(|_| {
                    data_err!("{} line {line}: channel `{}` value `{f}` is not numeric", path.display(), channels[j])
                })?;
                vals.push(v);
            }
        }
        rows.push((ts, vals));
    }
    if rows.is_empty() {
        return Err(data_err!("{}: no data rows", path.display()));
    }
    rows.sort_by_key(|r| r.0);

    let mut timestamps = vec![rows[0].0];
    let mut values = rows[0].1.clone();
    let mut gaps = Vec::new();
    for w in rows.windows(2) {
        let (prev, next) = (w[0].0, w[1].0);
        let delta = next - prev;
        if delta.is_zero() {
            return Err(data_err!("duplicate timestamp {next}"));
        }
        if delta.num_seconds() % 3600 != 0 {
            return Err(data_err!("non-hourly cadence between {prev} and {next}"));
        }
        let missing = (delta.num_hours() - 1) as usize;
        if missing > MAX_FILL_HOURS {
            return Err(data_err!("gap of {missing} hours between {prev} and {next} exceeds {MAX_FILL_HOURS}"));
        }
        if missing > 0 {
            gaps.push(FilledGap {
                channel: None,
                start: prev + TimeDelta::hours(1),
                hours: missing,
            });
            for k in 1..=missing {
                timestamps.push(prev + TimeDelta::hours(k as i64));
                values.extend(std::iter::repeat(f64::NAN).take(c));
            }
        }
        timestamps.push(next);
        values.extend_from_slice(&w[1].1);
    }

    // fill NaN runs per channel
    let n = timestamps.len();
    for j in 0..c {
        let mut t = 0;
        while t < n {
            if !values[t * c + j].is_nan() {
                t += 1;
                continue;
            }
            let start = t;
            while t < n && values[t * c + j].is_nan() {
                t += 1;
            }
            let len = t - start;
            if start == 0 || t == n {
                return Err(data_err!(
                    "channel `{}` has missing values at the series boundary ({} to {})",
                    channels[j],
                    timestamps[start],
                    timestamps[t - 1]
                ));
            }
            if len > MAX_FILL_HOURS {
                return Err(data_err!(
                    "channel `{}` is missing {len} hours from {} to {}",
                    channels[j],
                    timestamps[start],
                    timestamps[t - 1]
                ));
            }
            let (a, b) = (values[(start - 1) * c + j], values[t * c + j]);
            for k in 0..len {
                let frac = (k + 1) as f64 / (len + 1) as f64;
                values[(start + k) * c + j] = a + (b - a) * frac;
            }
            let already_reported = gaps.iter().any(|g| g.channel.is_none() && g.start == timestamps[start] && g.hours == len);
            if !already_reported {
                gaps.push(FilledGap {
                    channel: Some(channels[j].clone()),
                    start: timestamps[start],
                    hours: len,
                });
            }
        }
    }
    for g in &gaps {
        match &g.channel {
            Some(ch) => warn!("interpolated {} missing hour(s) of `{ch}` starting {}", g.hours, g.start),
            None => warn!("interpolated {} missing hour(s) starting {}", g.hours, g.start),
        }
    }
    Ok((Panel::new(timestamps, channels, values)?, gaps))
}
